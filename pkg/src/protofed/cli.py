"""Command-line experiment runner.

Subcommands:

* ``run <config>`` trains every configured seed and writes per-seed round
  CSVs plus a cross-seed summary CSV.
* ``preset <name>`` runs a named experiment battery (table3, table4, table5,
  fig4, fig5, appendixC, appendixE, appendixF) and adds a comparison CSV
  across its variants.
* ``validate <config>`` parses, validates, and prints the canonical config.
* ``dump-dataset <config>`` materializes the synthetic dataset as CSV.

``--set key=value`` (repeatable, dotted paths) overrides any config field;
``--out`` chooses the output directory. Exit code is 0 on success, 2 on
validation errors, 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import (
    ConfigError,
    ExperimentConfig,
    PRESET_NAMES,
    config_from_dict,
    parse_config,
    preset_variants,
    serialize_config,
)
from .datagen import build_federated_dataset, dump_dataset_csv
from .federation import run_training
from .metrics import MetricsLog, summarize_final, write_rounds_csv, write_summary_csv


def run_seeds(cfg: ExperimentConfig, out_dir, label: str = "run") -> list[MetricsLog]:
    """Train every configured seed and emit one rounds CSV per seed entry."""
    out_dir = Path(out_dir)
    logs = []
    for i, seed in enumerate(cfg.seeds):
        log = run_training(cfg, seed)
        logs.append(log)
        path = write_rounds_csv(log, out_dir / f"{label}_rounds_{i:02d}_seed{seed}.csv")
        final = log.rounds[-1].avg_acc if log.rounds else log.initial_avg_acc
        print(f"[{label}] seed {seed}: avg accuracy {final:.4f} "
              f"({log.wall_clock_seconds:.1f}s) -> {path}")
    return logs


def run_experiment(cfg: ExperimentConfig, out_dir) -> Path:
    """The plain multi-seed driver: per-seed round CSVs plus a summary."""
    logs = run_seeds(cfg, out_dir)
    summary = write_summary_csv([("run", summarize_final(logs))], Path(out_dir) / "summary.csv")
    print(f"[run] summary -> {summary}")
    return summary


def run_preset(name: str, out_dir, overrides: tuple[str, ...] = ()) -> Path:
    """Run every variant of a preset battery and emit a comparison CSV."""
    rows = []
    for variant, cfg in preset_variants(name):
        if overrides:
            cfg = config_from_dict(_reoverride(cfg), overrides)
        logs = run_seeds(cfg, Path(out_dir) / variant, label=variant)
        rows.append((variant, summarize_final(logs)))
    comparison = write_summary_csv(rows, Path(out_dir) / f"{name}_comparison.csv")
    print(f"[{name}] comparison -> {comparison}")
    return comparison


def _reoverride(cfg: ExperimentConfig) -> dict:
    from .config import config_to_dict

    return config_to_dict(cfg)


def _load(args) -> ExperimentConfig:
    return parse_config(args.config, tuple(args.set or ()))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="protofed", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_config=True):
        if with_config:
            p.add_argument("config", help="YAML config file (empty file = defaults)")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field by dotted path (repeatable)")

    add_common(sub.add_parser("run", help="train all configured seeds"))
    p_preset = sub.add_parser("preset", help="run a named experiment battery")
    p_preset.add_argument("name", choices=PRESET_NAMES)
    add_common(p_preset, with_config=False)
    add_common(sub.add_parser("validate", help="check a config and print its canonical form"))
    add_common(sub.add_parser("dump-dataset", help="write the synthetic dataset as CSV"))

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            run_experiment(_load(args), args.out)
        elif args.command == "preset":
            run_preset(args.name, args.out, tuple(args.set or ()))
        elif args.command == "validate":
            print(serialize_config(_load(args)), end="")
        elif args.command == "dump-dataset":
            cfg = _load(args)
            ds = build_federated_dataset(
                cfg.num_classes, cfg.input_dim, list(cfg.domains), cfg.partition, cfg.seeds[0]
            )
            for path in dump_dataset_csv(ds, args.out):
                print(f"[dump-dataset] -> {path}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surface runtime failures with a nonzero code
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
