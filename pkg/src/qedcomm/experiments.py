"""Run one configured method on one task and package the result as a report."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Callable

from ._kernel import TRACE_FIELDS
from .config import ExperimentConfig
from .eval import ExperimentReport, crossplay_matrix, info_decomposition
from .game import TaskSpec
from .maps import MappingSet, class_transpositions
from .qed import qed_run, train_population
from .training import TrainResult


def pool_size(population: int, k_percent: float) -> int:
    """Runs needed so that keeping the top ``k_percent`` leaves ``population`` survivors."""
    return math.ceil(population * 100.0 / k_percent - 1e-9)


def ground_truth_maps(task: TaskSpec, source: str = "analytic") -> MappingSet:
    if source == "analytic":
        return class_transpositions(task)
    maps = MappingSet.from_dict(json.loads(Path(source).read_text()))
    if maps.maps[0].num_actions != task.num_actions or maps.maps[0].num_goals != task.num_goals:
        raise ValueError(f"mapping set in {source} does not match the task dimensions")
    return maps


def _trace_csv(trace: list[dict[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(TRACE_FIELDS), lineterminator="\n")
    w.writeheader()
    for row in trace:
        w.writerow({k: repr(float(row[k])) if k != "iteration" else int(row[k]) for k in TRACE_FIELDS})
    return buf.getvalue()


def _report(
    cfg: ExperimentConfig,
    task: TaskSpec,
    runs: list[TrainResult],
    maps: MappingSet,
    traces: dict[str, Any],
) -> ExperimentReport:
    pop = [r.joint for r in runs]
    cross = crossplay_matrix(pop, task.goal_dist)
    return ExperimentReport(
        method=cfg.method,
        task=task,
        seeds=[r.seed for r in runs],
        sp_accuracies=[float(cross[i, i]) for i in range(len(pop))],
        crossplay=cross,
        diagnostics=[info_decomposition(j, maps, task) for j in pop],
        policies=pop,
        mapping_set=maps,
        config=cfg.to_dict(),
        traces=traces,
    )


def run_experiment(
    cfg: ExperimentConfig,
    workers: int | None = None,
    log: Callable[[dict[str, Any]], None] | None = None,
) -> tuple[ExperimentReport, dict[int, list[dict[str, float]]]]:
    """Execute ``cfg`` and return the report plus per-seed training traces."""
    task = cfg.task
    n = cfg.population
    base = cfg.base_seed
    if cfg.method == "max_class":
        return ExperimentReport(method="max_class", task=task, config=cfg.to_dict()), {}
    if cfg.method == "qed":
        res = qed_run(task, cfg.qed, workers=workers, log=log)
        runs = res.population
        extra = {"outer": res.outer_trace, "converged": res.converged}
        report = _report(cfg, task, runs, res.mapping_set, extra)
    else:
        if cfg.method == "sp":
            maps, seeds, k, key = None, [base + i for i in range(n)], None, "accuracy"
        elif cfg.method == "sp_max_filter":
            pool = pool_size(n, cfg.filter_k_percent)
            maps, seeds, k, key = None, [base + i for i in range(pool)], cfg.filter_k_percent, cfg.filter_key
        else:
            maps = ground_truth_maps(task, cfg.symmetries)
            pool = pool_size(n, cfg.filter_k_percent)
            seeds, k, key = [base + i for i in range(pool)], cfg.filter_k_percent, cfg.filter_key
        runs, _ = train_population(task, maps, cfg.train, seeds, k, workers, key)
        runs = runs[:n]
        report = _report(cfg, task, runs, maps or MappingSet.for_task(task), {})
    return report, {r.seed: r.trace for r in runs}


def write_outputs(
    report: ExperimentReport,
    traces: dict[int, list[dict[str, float]]],
    out_dir: str | Path,
    cfg: ExperimentConfig,
) -> Path:
    """Lay out ``<out>/<method>/<task>[-<condition>]/`` with the report and its side files."""
    task = report.task
    name = task.kind if (task.channel, task.goal_kind) == ("costly", "zipfian") else (
        f"{task.kind}-{task.channel}-{task.goal_kind}"
    )
    root = Path(out_dir) / report.method / name
    root.mkdir(parents=True, exist_ok=True)
    report.save(root / "report.json")
    if cfg.export_traces and traces:
        (root / "traces").mkdir(exist_ok=True)
        for seed, trace in traces.items():
            (root / "traces" / f"seed_{seed}.csv").write_text(_trace_csv(trace))
    if report.policies:
        (root / "policies").mkdir(exist_ok=True)
        for seed, joint in zip(report.seeds, report.policies):
            doc = json.dumps(joint.to_dict(task), indent=1, sort_keys=True)
            (root / "policies" / f"seed_{seed}.json").write_text(doc + "\n")
    if cfg.export_maps and report.mapping_set is not None:
        (root / "maps").mkdir(exist_ok=True)
        doc = json.dumps(report.mapping_set.to_dict(), indent=1, sort_keys=True)
        (root / "maps" / "mapping_set.json").write_text(doc + "\n")
    return root
