"""Pipeline command surface: synth, render, train, score, eval, plot.

Every command is deterministic given its flags; outputs are written
atomically so reruns produce byte-identical trees.
Exit codes: 0 success, 2 input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import datagen, geometry, metrics, pipeline, prompts, training
from .config import load_config, parse_views
from .fileio import atomic_write_bytes, heatmap_rgb, pgm_bytes, ppm_bytes, read_pgm
from .pipeline import PipelineSample
from .tensorio import EmbeddingTensor, McleError, file_provider, mcle_bytes, read_mcle


def _write_mcle_file(path, array, dtype) -> None:
    atomic_write_bytes(path, mcle_bytes(EmbeddingTensor(array.astype(dtype))))


def _read_mcle_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_mcle(fh).data


def write_views_file(path, views, resolution: int) -> None:
    lines = [f"resolution={resolution}"]
    lines += [f"{t.axis} {t.angle!r}" for t in views]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_views_file(path) -> tuple:
    """(list of ViewTransform, resolution)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("resolution="):
        raise ValueError(f"{path}: first line must be resolution=<int>")
    resolution = int(lines[0].partition("=")[2])
    views = []
    for line in lines[1:]:
        if not line.strip():
            continue
        axis, _, angle = line.partition(" ")
        views.append(geometry.rotation_matrix(axis, float(angle)))
    if not views:
        raise ValueError(f"{path}: no views listed")
    return views, resolution


def write_render(out_dir, sample_id: str, renders) -> None:
    d = Path(out_dir) / sample_id
    d.mkdir(parents=True, exist_ok=True)
    for k, rv in enumerate(renders):
        _write_mcle_file(d / f"view{k}.depth.mcle", rv.depth, np.float32)
        atomic_write_bytes(
            d / f"view{k}.mask.pgm", pgm_bytes(rv.mask2d.astype(np.uint8) * 255)
        )
        # index map rides in an f64 tensor; values are exact integers, -1 empty
        _write_mcle_file(d / f"view{k}.pix2point.mcle", rv.pix2point, np.float64)


def load_renders(render_root, sample_id: str) -> tuple:
    root = Path(render_root)
    views, _ = read_views_file(root / "views.txt")
    d = root / sample_id
    renders = []
    for k, t in enumerate(views):
        depth = _read_mcle_file(d / f"view{k}.depth.mcle").astype(np.float64)
        mask2d = read_pgm(d / f"view{k}.mask.pgm") > 0
        p2p = _read_mcle_file(d / f"view{k}.pix2point.mcle")
        pix2point = np.rint(p2p).astype(np.int64)
        renders.append(
            geometry.ViewRender(
                depth=depth,
                mask2d=mask2d,
                pix2point=pix2point,
                view_label=bool(mask2d.any()),
                transform=t,
            )
        )
    return tuple(renders)


def load_sample(dataset, renders_dir, sample_id: str, provider) -> PipelineSample:
    cloud = datagen.load_cloud(Path(dataset) / sample_id)
    renders = load_renders(renders_dir, sample_id)
    rgb_bundle = provider.get(sample_id, "rgb")
    view_bundles = tuple(
        provider.get(sample_id, f"view{k}") for k in range(len(renders))
    )
    return PipelineSample(sample_id, cloud, renders, rgb_bundle, view_bundles)


def _config_from_args(args, extra: dict | None = None, seed_key: str = "seed"):
    overrides = dict(extra or {})
    if getattr(args, "views", None):
        overrides.update(parse_views(args.views))
    if getattr(args, "seed", None) is not None:
        overrides[seed_key] = args.seed
    if getattr(args, "eta", None) is not None:
        overrides["eta"] = args.eta
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    return load_config(args.config, overrides)


def cmd_synth(args) -> int:
    extra = {}
    if args.normal is not None:
        extra["n_normal"] = args.normal
    if args.anomalous is not None:
        extra["n_anomalous"] = args.anomalous
    if args.kinds is not None:
        extra["kinds"] = tuple(k.strip() for k in args.kinds.split(",") if k.strip())
    cfg = _config_from_args(args, extra)
    samples = datagen.generate(
        cfg.synth_spec(), views=cfg.view_set(), resolution=cfg.resolution
    )
    datagen.write_dataset(samples, args.out)
    spec = cfg.synth_spec()
    print(
        f"wrote {spec.total} samples ({spec.n_normal} normal, "
        f"{spec.n_anomalous} anomalous) to {args.out}"
    )
    return 0


def cmd_render(args) -> int:
    cfg = _config_from_args(args)
    ids = datagen.list_sample_ids(args.dataset)
    views = cfg.view_set()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_views_file(out / "views.txt", views, cfg.resolution)
    for sid in ids:
        cloud = datagen.load_cloud(Path(args.dataset) / sid)
        renders = [geometry.render_view(cloud, t, cfg.resolution) for t in views]
        write_render(out, sid, renders)
    print(f"rendered {len(ids)} samples x {len(views)} views to {args.out}")
    return 0


def cmd_train(args) -> int:
    # at train time the seed flag steers the bank/shuffle, not the dataset
    cfg = _config_from_args(args, seed_key="bank_seed")
    ids = datagen.list_sample_ids(args.dataset)
    provider = file_provider(args.dataset)
    samples = [load_sample(args.dataset, args.renders, sid, provider) for sid in ids]
    bank = prompts.build_bank(cfg.prompt_config(), cfg.bank_seed)
    encoder = prompts.build_encoder(
        cfg.token_dim, cfg.embed_dim, cfg.n_layers, cfg.encoder_seed
    )
    result = training.train_prompts(samples, bank, encoder, cfg.train_config())
    prompts.save_bank(
        result.bank,
        args.out,
        extra={
            "encoder_seed": cfg.encoder_seed,
            "epochs": cfg.epochs,
            "lr": repr(cfg.lr),
        },
    )
    trace_text = "".join(f"{v!r}\n" for v in result.trace)
    atomic_write_bytes(Path(args.out) / "loss_trace.txt", trace_text.encode())
    last = f"{result.trace[-1]:.6f}" if result.trace else "n/a (0 epochs)"
    print(
        f"trained on {len(samples)} samples for {cfg.epochs} epochs; "
        f"final mean loss {last}"
    )
    return 0


def cmd_score(args) -> int:
    cfg = _config_from_args(args)
    bank, extra = prompts.load_bank(args.checkpoint)
    enc_seed = int(extra.get("encoder_seed", cfg.encoder_seed))
    bcfg = bank.config
    encoder = prompts.build_encoder(
        bcfg.token_dim, bcfg.embed_dim, bcfg.n_layers, enc_seed
    )
    embeds = prompts.encode_all(bank, encoder)
    ids = datagen.list_sample_ids(args.dataset)
    provider = file_provider(args.dataset)
    out = Path(args.out)
    maps_dir = out / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    rows = ["sample\tscore_rgb\tscore_point\tscore_final\teta"]
    for sid in ids:
        sample = load_sample(args.dataset, args.renders, sid, provider)
        rep = pipeline.score_sample(
            sample, embeds, eta=cfg.eta, sigma=cfg.sigma, tau=cfg.tau
        )
        _write_mcle_file(maps_dir / f"{sid}.fused.mcle", rep.fused_map, np.float32)
        rows.append(
            f"{sid}\t{rep.rgb.score!r}\t{rep.point.score!r}"
            f"\t{rep.fused_score!r}\t{cfg.eta!r}"
        )
    atomic_write_bytes(out / "results.tsv", ("\n".join(rows) + "\n").encode())
    print(f"scored {len(ids)} samples (eta={cfg.eta}) into {args.out}")
    return 0


def _read_results(path) -> dict:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split("\t")[0] != "sample":
        raise ValueError(f"{path}: missing results header")
    scores = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != 5:
            raise ValueError(f"{path}: malformed row {line!r}")
        scores[cells[0]] = float(cells[3])
    if not scores:
        raise ValueError(f"{path}: no result rows")
    return scores


def cmd_eval(args) -> int:
    results = Path(args.results)
    scores_by_id = _read_results(results / "results.tsv")
    ids = sorted(scores_by_id)
    labels, scores, maps, masks, valids = [], [], [], [], []
    for sid in ids:
        cloud = datagen.load_cloud(Path(args.dataset) / sid)
        labels.append(1.0 if cloud.global_label else 0.0)
        scores.append(scores_by_id[sid])
        maps.append(
            _read_mcle_file(results / "maps" / f"{sid}.fused.mcle").astype(np.float64)
        )
        masks.append(cloud.mask)
        valids.append(cloud.valid)
    if len(set(labels)) < 2:
        raise ValueError("degenerate labels: need both normal and anomalous samples")
    vals = (
        metrics.auroc(scores, labels),
        metrics.average_precision(scores, labels),
        metrics.pixel_auroc(maps, masks, valid=valids),
        metrics.aupro(maps, masks, valid=valids),
    )
    table = metrics.summary_table(
        [(Path(args.dataset).name or "dataset", vals)],
        out_path=results / "summary.tsv",
    )
    print(table, end="")
    return 0


def cmd_plot(args) -> int:
    src = Path(args.maps)
    files = sorted(src.glob("*.mcle")) if src.is_dir() else [src]
    if not files:
        raise ValueError(f"no .mcle maps under {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in files:
        values = _read_mcle_file(f).astype(np.float64)
        if values.ndim != 2:
            raise ValueError(f"{f}: expected a 2-D map, got dims {values.shape}")
        name = f.name.split(".", 1)[0]
        atomic_write_bytes(out / f"{name}.ppm", ppm_bytes(heatmap_rgb(values)))
    print(f"plotted {len(files)} maps to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvanomaly",
        description="Zero-shot 3D anomaly detection pipeline over synthetic "
        "or exported embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seed=False, eta=False, epochs=False, views=False):
        p.add_argument("--config", default=None, help="key=value config file")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        if eta:
            p.add_argument("--eta", type=float, default=None)
        if epochs:
            p.add_argument("--epochs", type=int, default=None)
        if views:
            p.add_argument(
                "--views", default=None, help="angle grammar 'x=a,b;y=c,d' (radians)"
            )

    p = sub.add_parser("synth", help="generate a synthetic dataset with embeddings")
    common(p, seed=True, views=True)
    p.add_argument("--normal", type=int, default=None)
    p.add_argument("--anomalous", type=int, default=None)
    p.add_argument("--kinds", default=None, help="comma list: geometric,color")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="render per-sample multi-view depth maps")
    common(p, views=True)
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="train prompt tokens; writes a checkpoint")
    common(p, seed=True, epochs=True)
    p.add_argument("dataset")
    p.add_argument("renders")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score samples with a trained checkpoint")
    common(p, eta=True)
    p.add_argument("dataset")
    p.add_argument("renders")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="summarize metrics for a score run")
    common(p)
    p.add_argument("results", help="directory written by score")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render anomaly maps to PPM heat maps")
    common(p)
    p.add_argument("maps", help="a map file or a directory of .mcle maps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except training.NonFiniteLossError as exc:
        print(
            f"error: non-finite loss ({exc.value}) at sample {exc.sample_id}",
            file=sys.stderr,
        )
        return 3
    except (ValueError, OSError, KeyError, McleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
