"""Command-line front end: partition, train, evaluate, sweep, export.

Configs are JSON files mirroring ExperimentConfig; any field can be
overridden on the command line with --set key=value (values parsed as JSON,
with bare strings and comma lists accepted).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataio import write_partition_manifest
from .errors import FedSubspaceError
from .harness import (
    ExperimentConfig,
    evaluate_run_dir,
    export_views,
    load_dataset,
    make_shards,
    run_experiment,
    sweep,
)


def _parse_value(raw: str):
    lowered = raw.strip().lower()
    if lowered in ("none", "null"):
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if "," in raw:
            return [_parse_value(part) for part in raw.split(",")]
        return raw


def load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
    for item in args.set or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        data[key.strip()] = _parse_value(raw)
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "output_dir", None):
        data["output_dir"] = args.output_dir
    return ExperimentConfig.from_dict(data)


def cmd_partition(args) -> int:
    config = load_config(args)
    shards = make_shards(config, load_dataset(config))
    out = Path(args.output or "partition.json")
    write_partition_manifest(shards, out)
    print(f"wrote {out} ({len(shards)} clients)")
    return 0


def cmd_train(args) -> int:
    config = load_config(args)
    if not config.output_dir:
        raise SystemExit("train requires --output-dir (or output_dir in the config)")
    result = run_experiment(config)
    print(f"run {result.config_hash[:12]} finished in {result.wall_time:.1f}s")
    print(f"mean: acc={result.mean.acc:.2f} nmi={result.mean.nmi:.2f} "
          f"ami={result.mean.ami:.2f} ari={result.mean.ari:.2f}")
    print(f"outputs under {config.output_dir}")
    return 0


def cmd_evaluate(args) -> int:
    per_client, mean, pooled = evaluate_run_dir(args.run_dir)
    for cid, report in enumerate(per_client):
        print(f"client {cid}: acc={report.acc:.2f} nmi={report.nmi:.2f} "
              f"ami={report.ami:.2f} ari={report.ari:.2f}")
    print(f"mean:   acc={mean.acc:.2f} nmi={mean.nmi:.2f} ami={mean.ami:.2f} ari={mean.ari:.2f}")
    print(f"pooled: acc={pooled.acc:.2f} nmi={pooled.nmi:.2f} ami={pooled.ami:.2f} ari={pooled.ari:.2f}")
    return 0


def cmd_sweep(args) -> int:
    config = load_config(args)
    values = [_parse_value(v) for v in args.values.split(",")]
    results = sweep(config, args.axis, values)
    print(f"{args.axis:>18} {'acc':>7} {'nmi':>7} {'ami':>7} {'ari':>7}")
    for value, result in zip(values, results):
        mean = result.mean
        print(f"{value!s:>18} {mean.acc:7.2f} {mean.nmi:7.2f} {mean.ami:7.2f} {mean.ari:7.2f}")
    return 0


def cmd_export(args) -> int:
    written = export_views(args.run_dir)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsubspace",
        description="Federated deep subspace clustering simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (repeatable)")
        p.add_argument("--seed", type=int, required=seed_required,
                       help="master seed" + (" (required)" if seed_required else ""))
        p.add_argument("--output-dir", help="where to write run artifacts")

    p = sub.add_parser("partition", help="write the client partition manifest")
    common(p)
    p.add_argument("--output", help="manifest path (default partition.json)")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="run the full training + evaluation pipeline")
    common(p, seed_required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="re-score a finished run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run one experiment per value of a parameter")
    common(p)
    p.add_argument("--axis", required=True, help="parameter to vary (e.g. lambda3, m, tau)")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", help="write 2-D projections and affinity dumps")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FedSubspaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
