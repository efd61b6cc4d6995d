"""Walk dataset samples and write per-branch MCLE embedding bundles.

Inputs are plain files: `rgb.ppm` under the dataset root for the color branch
and `view<k>.depth.mcle` under the renders root for the geometry branches.
Outputs follow the provider naming scheme `<out>/<sample>/<branch>.global.mcle`
plus `<branch>.local<m>.mcle`, with tensor shapes recorded in a sidecar
manifest at the output root.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import mcle, model as model_lib


@dataclass(frozen=True)
class ExportManifest:
    """Identity and geometry of one export run."""

    model_id: str = model_lib.MODEL_ID
    resolution: int = model_lib.IMAGE_SIZE
    key_layers: tuple[int, ...] = model_lib.KEY_LAYERS

    def __post_init__(self):
        if self.resolution < model_lib.PATCH_SIZE:
            raise ValueError(f"resolution must be >= {model_lib.PATCH_SIZE}")
        if self.resolution % model_lib.PATCH_SIZE != 0:
            raise ValueError("resolution must be a multiple of the patch size")
        layers = tuple(int(k) for k in self.key_layers)
        if len(layers) < 1 or any(k < 1 for k in layers):
            raise ValueError("key layers must be positive")
        if any(b <= a for a, b in zip(layers, layers[1:])):
            raise ValueError(f"key layers must be strictly increasing, got {layers}")
        object.__setattr__(self, "key_layers", layers)

    @property
    def patch_grid(self) -> int:
        return self.resolution // model_lib.PATCH_SIZE

    def lines(self) -> list[str]:
        side = self.patch_grid
        return [
            f"model={self.model_id}",
            f"resolution={self.resolution}",
            "key_layers=" + ",".join(str(k) for k in self.key_layers),
            f"global_shape={model_lib.EMBED_DIM}",
            f"local_shape={side * side}x{model_lib.EMBED_DIM}",
        ]


def read_image(path) -> np.ndarray:
    """Any PIL-readable image file -> H x W x 3 uint8."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def list_sample_ids(dataset_root) -> list[str]:
    """Sample ids are subdirectories holding an rgb.ppm image."""
    root = Path(dataset_root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    ids = sorted(p.name for p in root.iterdir() if (p / "rgb.ppm").is_file())
    if not ids:
        raise ValueError(f"no samples under {root}")
    return ids


def find_depth_views(renders_root, sample_id: str) -> list[Path]:
    """Contiguous view<k>.depth.mcle paths for one sample, k from 0."""
    d = Path(renders_root) / sample_id
    paths = []
    k = 0
    while (d / f"view{k}.depth.mcle").is_file():
        paths.append(d / f"view{k}.depth.mcle")
        k += 1
    if not paths:
        raise FileNotFoundError(f"no depth views under {d}")
    return paths


def export_branch(model, image: np.ndarray, out_sample_dir, branch: str) -> list[Path]:
    """Embed one image and write its global plus per-key-layer local files."""
    out = Path(out_sample_dir)
    out.mkdir(parents=True, exist_ok=True)
    global_vec, locals_ = model_lib.embed_image(model, image)
    written = [out / f"{branch}.global.mcle"]
    mcle.write_file(written[0], global_vec)
    for m, feats in enumerate(locals_):
        path = out / f"{branch}.local{m}.mcle"
        mcle.write_file(path, feats)
        written.append(path)
    return written


def export_sample(model, dataset_root, renders_root, out_root, sample_id: str) -> list[Path]:
    """Export the color branch and every rendered view branch of one sample."""
    out_dir = Path(out_root) / sample_id
    rgb = read_image(Path(dataset_root) / sample_id / "rgb.ppm")
    written = export_branch(model, rgb, out_dir, "rgb")
    for k, depth_path in enumerate(find_depth_views(renders_root, sample_id)):
        depth = mcle.read_file(depth_path)
        image = model_lib.depth_to_image(depth)
        written.extend(export_branch(model, image, out_dir, f"view{k}"))
    return written


def export_tree(
    model,
    dataset_root,
    renders_root,
    out_root,
    sample_ids: list[str] | None = None,
    manifest: ExportManifest | None = None,
) -> tuple[int, int]:
    """Export every sample; returns (n samples, n files written)."""
    manifest = manifest or ExportManifest()
    ids = sample_ids if sample_ids is not None else list_sample_ids(dataset_root)
    out = Path(out_root)
    out.mkdir(parents=True, exist_ok=True)
    n_files = 0
    for sid in ids:
        n_files += len(export_sample(model, dataset_root, renders_root, out, sid))
    text = "\n".join(manifest.lines()) + "\n"
    (out / "manifest.txt").write_text(text)
    return len(ids), n_files + 1
