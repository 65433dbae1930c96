"""Command-line entry point: ``qedcomm run|ablate|report|export-heatmaps``."""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
import traceback
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .eval import ExperimentReport, aggregate, export_heatmaps, render_table, rows_to_csv
from .experiments import run_experiment, write_outputs

logger = logging.getLogger("qedcomm")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

ABLATION_CELLS = (
    ("cheap_talk", "uniform"),
    ("cheap_talk", "zipfian"),
    ("costly", "uniform"),
    ("costly", "zipfian"),
)


class UsageError(Exception):
    pass


def _stamp(root: Path, argv: list[str]) -> None:
    # kept out of report.json so that repeated runs produce identical reports
    info = {
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "argv": argv,
    }
    (root / "run_info.json").write_text(json.dumps(info, indent=1) + "\n")


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise UsageError("--config is required")
    return load_config(args.config).with_seed_offset(args.seed_offset)


def _log_record(record: dict) -> None:
    logger.info(
        "qed iteration %d: SP %.3f XP %.3f maps %d (+%d)",
        record["iteration"],
        record["sp_mean"],
        record["xp_mean"],
        record["num_maps"],
        record["new_maps"],
    )


def _run_one(cfg: ExperimentConfig, out: Path, workers, argv) -> ExperimentReport:
    report, traces = run_experiment(cfg, workers=workers, log=_log_record)
    root = write_outputs(report, traces, out, cfg)
    _stamp(root, argv)
    if cfg.export_heatmaps and len(report.policies) >= 2:
        export_heatmaps(report.policies[0], root / "heatmaps", partner=report.policies[1])
    logger.info(
        "%s on %s [%s]: SP %.3f ± %.3f, XP %.3f ± %.3f -> %s",
        report.method,
        report.task.kind,
        report.condition,
        report.sp_mean,
        report.sp_std,
        report.xp_mean,
        report.xp_std,
        root,
    )
    return report


def cmd_run(args) -> int:
    cfg = _load(args)
    _run_one(cfg, Path(args.out), args.workers, args.argv)
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = _load(args)
    if base.method != "qed" or base.task_kind != "energy_degeneracy":
        raise ConfigError("ablation needs method: qed and task: energy_degeneracy", path=args.config)
    out = Path(args.out)
    reports = [_run_one(base.with_task(ch, gk), out, args.workers, args.argv) for ch, gk in ABLATION_CELLS]
    _write_table(aggregate(reports), Path(args.out) / "ablation")
    return EXIT_OK


def _write_table(rows, stem: Path) -> None:
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".csv").write_text(rows_to_csv(rows))
    text = render_table(rows)
    stem.with_suffix(".txt").write_text(text)
    print(text, end="")


def _read_report(path: str) -> ExperimentReport:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"report not found: {path}")
    try:
        return ExperimentReport.load(p)
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot parse report {path}: {exc}") from None


def cmd_report(args) -> int:
    reports = [_read_report(p) for p in args.reports]
    try:
        rows = aggregate(reports)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write_table(rows, Path(args.out) / "table")
    return EXIT_OK


def cmd_export_heatmaps(args) -> int:
    report = _read_report(args.report)
    n = len(report.policies)
    if not n:
        raise UsageError(f"{args.report} contains no policy snapshots")
    for idx in (args.seed_index, args.partner_index):
        if idx is not None and not 0 <= idx < n:
            raise UsageError(f"seed index {idx} out of range for {n} policies")
    partner_idx = args.partner_index
    if partner_idx is None and n > 1:
        partner_idx = (args.seed_index + 1) % n
    partner = None if partner_idx is None else report.policies[partner_idx]
    files = export_heatmaps(report.policies[args.seed_index], Path(args.out), partner=partner)
    for f in files:
        print(f)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qedcomm", description="Self-play, other-play and QED experiments on referential games."
    )
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="YAML or JSON experiment config")
            p.add_argument("--seed-offset", type=int, default=0, help="added to every seed in the config")
        p.add_argument("--out", default="results", help="output directory (default: results)")
        p.add_argument("--workers", type=int, default=None, help="parallel processes (default: all CPUs)")

    p = sub.add_parser("run", parents=[shared], help="run one configured experiment")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", parents=[shared], help="run the channel x goal-distribution grid for a QED config")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", parents=[shared], help="combine reports into a table")
    p.add_argument("reports", nargs="+", help="report.json files")
    p.add_argument("--out", default="results", help="directory for table.csv/table.txt")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-heatmaps", parents=[shared], help="write sender/receiver/confusion CSVs from a report")
    p.add_argument("report", help="report.json with policy snapshots")
    p.add_argument("--seed-index", type=int, default=0, help="which policy to export (default 0)")
    p.add_argument("--partner-index", type=int, default=None, help="partner for the XP confusion")
    p.add_argument("--out", default="heatmaps", help="output directory")
    p.set_defaults(func=cmd_export_heatmaps)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime abort: leave a diagnostic behind
        out = Path(getattr(args, "out", ".") or ".")
        try:
            out.mkdir(parents=True, exist_ok=True)
            diag = out / "error.txt"
            diag.write_text(traceback.format_exc())
            where = f" (details in {diag})"
        except OSError:
            where = ""
        print(f"error: {type(exc).__name__}: {exc}{where}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
