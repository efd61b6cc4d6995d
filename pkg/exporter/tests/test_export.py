"""Exported bundles: shapes, provider interop, determinism, scoring run."""

from __future__ import annotations

import hashlib
import re
from pathlib import Path

import numpy as np
import pytest

from clip_exporter import export, mcle
from clip_exporter import model as model_lib
from mvanomaly import cli as core_cli
from mvanomaly import prompts
from mvanomaly.tensorio import file_provider

BRANCHES = ("rgb", "view0", "view1")
_EMBED_FILE = re.compile(r"\.(global|local\d+)\.mcle$")


def _embed_digests(sample_dir: Path) -> dict:
    out = {}
    for path in sorted(sample_dir.iterdir()):
        if _EMBED_FILE.search(path.name):
            out[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


def test_export_message_and_sidecar(exported):
    assert exported["message"] == f"exported 1 samples (16 files) to {exported['out']}\n"
    lines = (exported["out"] / "manifest.txt").read_text().splitlines()
    assert lines == [
        "model=clip-vit-large-14-336",
        "resolution=336",
        "key_layers=6,12,18,24",
        "global_shape=768",
        "local_shape=576x768",
    ]


def test_bundles_load_with_file_provider(exported):
    provider = file_provider(exported["out"])
    for branch in BRANCHES:
        bundle = provider.get("s000", branch)
        assert bundle.dim == 768
        assert bundle.global_.dtype == "f32"
        assert len(bundle.locals_) == 4
        for loc in bundle.locals_:
            assert loc.dims == (576, 768)
            assert loc.dtype == "f32"
        assert np.isfinite(bundle.global_.data).all()
        assert all(np.isfinite(loc.data).all() for loc in bundle.locals_)


def test_reexport_is_byte_identical(model, exported):
    sample_dir = exported["out"] / "s000"
    before = _embed_digests(sample_dir)
    assert len(before) == 15  # 3 branches x (1 global + 4 locals)
    export.export_sample(
        model, exported["dataset"], exported["renders"], exported["out"], "s000"
    )
    assert _embed_digests(sample_dir) == before


def test_scoring_completes_over_export(exported, tmp_path):
    cfg = prompts.PromptConfig(
        token_dim=8, embed_dim=768, length_normal=2, length_anomaly=2, n_layers=1
    )
    ckpt = tmp_path / "ckpt"
    prompts.save_bank(prompts.build_bank(cfg, seed=0), ckpt, extra={"encoder_seed": "0"})
    out = tmp_path / "scores"
    rc = core_cli.main(
        ["score", str(exported["out"]), str(exported["renders"]), str(ckpt), "--out", str(out)]
    )
    assert rc == 0
    lines = (out / "results.tsv").read_text().splitlines()
    assert lines[0] == "sample\tscore_rgb\tscore_point\tscore_final\teta"
    cells = lines[1].split("\t")
    assert cells[0] == "s000"
    assert all(np.isfinite(float(c)) for c in cells[1:])
    fused = mcle.read_file(out / "maps" / "s000.fused.mcle")
    assert fused.shape == (32, 32)
    assert np.isfinite(fused).all()


def test_depth_to_image_replicates_channels():
    depth = np.array([[0.0, 0.5], [1.0, 2.0]])
    img = model_lib.depth_to_image(depth)
    assert img.shape == (2, 2, 3)
    assert img.dtype == np.uint8
    assert (img[..., 0] == img[..., 1]).all() and (img[..., 1] == img[..., 2]).all()
    assert img[..., 0].tolist() == [[0, 128], [255, 255]]  # clipped above 1
    with pytest.raises(ValueError, match="2-D"):
        model_lib.depth_to_image(np.zeros(4))


def test_mcle_round_trip(tmp_path):
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)
    path = tmp_path / "t.mcle"
    mcle.write_file(path, arr)
    back = mcle.read_file(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)
    assert mcle.mcle_bytes(arr)[:4] == b"MCLE"
    with pytest.raises(ValueError, match="bad magic"):
        mcle.read_mcle(__import__("io").BytesIO(b"XXXX" + b"\x00" * 12))


def test_manifest_rejects_bad_layers():
    with pytest.raises(ValueError, match="strictly increasing"):
        export.ExportManifest(key_layers=(6, 6, 18, 24))
    with pytest.raises(ValueError, match="multiple of the patch size"):
        export.ExportManifest(resolution=300)
    manifest = export.ExportManifest()
    assert manifest.patch_grid == 24
