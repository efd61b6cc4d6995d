"""Command line entry points: export embedding trees, serve them over HTTP."""

from __future__ import annotations

import argparse
import sys

from . import export, model as model_lib, serve


def cmd_export(args) -> int:
    model = model_lib.build_model(weights=args.weights, seed=args.seed)
    ids = args.samples.split(",") if args.samples else None
    n_samples, n_files = export.export_tree(
        model, args.dataset, args.renders, args.out, sample_ids=ids
    )
    print(f"exported {n_samples} samples ({n_files} files) to {args.out}")
    return 0


def cmd_serve(args) -> int:
    serve.run(args.root, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-exporter",
        description="export frozen CLIP vision embeddings as MCLE bundles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="embed dataset images and rendered depth views")
    p.add_argument("--dataset", required=True, help="root holding <sample>/rgb.ppm")
    p.add_argument("--renders", required=True, help="root holding <sample>/view<k>.depth.mcle")
    p.add_argument("--out", required=True, help="output embedding root")
    p.add_argument("--samples", default=None, help="comma-separated sample ids (default: all)")
    p.add_argument("--weights", default=None, help="local checkpoint directory (default: seeded random)")
    p.add_argument("--seed", type=int, default=0, help="init seed when no weights are given")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="serve an export tree over HTTP")
    p.add_argument("--root", required=True, help="export tree to serve")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
