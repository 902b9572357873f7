"""CLI wrapper: alemb-export --images DIR --out-emb PATH --out-labels PATH."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .exporter import ExportError, ExportJob, MODEL_REGISTRY, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alemb-export",
        description="Export penultimate-layer CNN features for an image folder "
        "(class-per-subfolder layout) in the ALEMB1 format.",
    )
    parser.add_argument("--images", required=True, help="image root directory")
    parser.add_argument("--out-emb", required=True, help="output embedding file")
    parser.add_argument("--out-labels", required=True, help="output labels file")
    parser.add_argument(
        "--model",
        default="resnet18",
        choices=sorted(MODEL_REGISTRY),
        help="feature extractor (default: resnet18)",
    )
    parser.add_argument("--batch", type=int, default=32, help="inference batch size")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        images_root=Path(args.images),
        out_embeddings=Path(args.out_emb),
        out_labels=Path(args.out_labels),
        model_name=args.model,
        batch_size=args.batch,
    )
    try:
        summary = export(job)
    except (ExportError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    counts = ", ".join(f"{k}={v}" for k, v in sorted(summary.per_class.items()))
    print(f"exported {summary.n_samples} images x {summary.dim} dims ({counts})")
    if summary.skipped:
        print(f"skipped {len(summary.skipped)} unreadable files", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
