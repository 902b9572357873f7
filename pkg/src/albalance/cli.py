"""Command-line front door: induce / run / stats / curves.

Exit codes: 0 success, 1 IO or data errors, 2 infeasible targets and invalid
or mixed configs. Unknown subcommands or flags exit 2 with usage text.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_run_config
from .dataset import (
    DatasetError,
    load_dataset,
    read_label_lines,
    write_embeddings,
    write_labels,
)
from .imbalance import (
    ImbalanceError,
    InductionSpec,
    InfeasibleTargetError,
    TargetUnreachableError,
    imbalance_ratio,
    induce_imbalance,
    prune_dataset,
)
from .runner import AggregateCurves, RunRecord, aggregate_runs, run_experiment

CURVES_HEADER = "iteration,labeled_count,acc_mean,acc_std,ir_mean,ir_std,scheme"


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def write_curves_csv(path: Path, agg: AggregateCurves) -> None:
    """Locale-independent CSV: dot decimals, LF endings, 6-decimal reals."""
    rows = [CURVES_HEADER]
    for i in range(len(agg.iterations)):
        rows.append(
            f"{agg.iterations[i]},{agg.labeled_counts[i]},"
            f"{agg.acc_mean[i]:.6f},{agg.acc_std[i]:.6f},"
            f"{agg.ir_mean[i]:.6f},{agg.ir_std[i]:.6f},{agg.schemes[i]}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


def _dump_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_induce(args: argparse.Namespace) -> int:
    try:
        store, oracle = load_dataset(args.embeddings, args.labels, normalize=False)
        spec = InductionSpec(
            target_ir=args.target_ir,
            min_per_class=args.min_per_class,
            rng_seed=args.seed,
            max_iters=args.max_iters,
        )
        pruned_counts = induce_imbalance(oracle.class_counts(), spec)
        new_store, new_oracle = prune_dataset(store, oracle, pruned_counts, args.seed)
    except (InfeasibleTargetError, TargetUnreachableError) as err:
        return _fail(str(err), 2)
    except (OSError, DatasetError, ImbalanceError, ValueError) as err:
        return _fail(str(err), 1)
    try:
        write_labels(
            args.out_labels,
            new_store.sample_names,
            (new_oracle.class_names[c] for c in new_oracle.labels),
        )
        _dump_json(Path(args.out_report), imbalance_ratio(pruned_counts).as_dict())
        if args.out_embeddings:
            write_embeddings(args.out_embeddings, new_store.vectors)
    except OSError as err:
        return _fail(str(err), 1)
    stats = imbalance_ratio(pruned_counts)
    print(f"pruned to {int(sum(stats.per_class))} samples, ir={stats.ir:.4f}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        pairs = read_label_lines(args.labels)
    except (OSError, DatasetError) as err:
        return _fail(str(err), 1)
    if not pairs:
        return _fail("labels file is empty", 1)
    counts: dict[str, int] = {}
    for _, cls in pairs:
        counts[cls] = counts.get(cls, 0) + 1
    stats = imbalance_ratio(list(counts.values()))
    print(f"{'classes':>8} {'images':>8} {'mean':>10} {'std':>10} {'ir':>8}")
    print(
        f"{len(counts):>8} {len(pairs):>8} {stats.mean:>10.2f} {stats.std:>10.2f} "
        f"{stats.ir:>8.3f}"
    )
    print(
        json.dumps(
            {
                "classes": len(counts),
                "images": len(pairs),
                "mean": stats.mean,
                "std": stats.std,
                "ir": stats.ir,
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config, data_section = load_run_config(args.config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    emb = args.embeddings or data_section.get("embeddings")
    lab = args.labels or data_section.get("labels")
    test_emb = args.test_embeddings or data_section.get("test_embeddings")
    test_lab = args.test_labels or data_section.get("test_labels")
    missing = [
        name
        for name, value in (
            ("embeddings", emb),
            ("labels", lab),
            ("test-embeddings", test_emb),
            ("test-labels", test_lab),
        )
        if not value
    ]
    if missing:
        return _fail(
            "missing data paths (flag or [data] section): " + ", ".join(missing), 2
        )
    try:
        store, oracle = load_dataset(emb, lab, normalize=config.normalize_embeddings)
        test_store, test_oracle = load_dataset(
            test_emb, test_lab, normalize=config.normalize_embeddings
        )
    except (OSError, DatasetError) as err:
        return _fail(str(err), 1)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        records = run_experiment(config, store, oracle, test_store, test_oracle)
        for record in records:
            path = out_dir / f"run_seed{record.seed:04d}.json"
            _dump_json(path, record.to_dict())
            written.append(path)
        curves = out_dir / "curves.csv"
        write_curves_csv(curves, aggregate_runs(records))
        written.append(curves)
    except Exception as err:  # noqa: BLE001 - partial outputs must not survive
        for path in written:
            path.unlink(missing_ok=True)
        return _fail(str(err), 1)
    print(f"wrote {len(written)} files to {out_dir}")
    return 0


def cmd_curves(args: argparse.Namespace) -> int:
    records_dir = Path(args.records_dir)
    paths = sorted(records_dir.glob("run_seed*.json"))
    if not paths:
        return _fail(f"no run records found in {records_dir}", 1)
    records: list[RunRecord] = []
    try:
        for path in paths:
            with open(path, "r", encoding="utf-8") as fh:
                records.append(RunRecord.from_dict(json.load(fh)))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as err:
        return _fail(f"cannot parse run records: {err}", 1)
    first = records[0].config
    if any(r.config != first for r in records[1:]):
        return _fail("records in this directory come from different configs", 2)
    out = Path(args.out) if args.out else records_dir / "curves.csv"
    try:
        write_curves_csv(out, aggregate_runs(records))
    except Exception as err:  # noqa: BLE001
        return _fail(str(err), 1)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="albalance",
        description="Iterative active learning on imbalanced datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("induce", help="prune a dataset toward a target imbalance ratio")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--target-ir", type=float, required=True)
    p.add_argument("--min-per-class", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--out-report", required=True)
    p.add_argument(
        "--out-embeddings",
        help="also write the pruned embedding rows, aligned with the pruned labels",
    )
    p.set_defaults(func=cmd_induce)

    p = sub.add_parser("stats", help="imbalance statistics of a labels file")
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("run", help="run the active-learning experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--labels")
    p.add_argument("--test-embeddings")
    p.add_argument("--test-labels")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("curves", help="re-derive the aggregate CSV from run records")
    p.add_argument("--records-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_curves)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
