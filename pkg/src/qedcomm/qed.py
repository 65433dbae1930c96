"""The QED outer loop: train under the current map set, harvest maps from pairs, repeat."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .game import GoalDistribution, TaskSpec
from .maps import MappingSet
from .parallel import pmap
from .policy import JointPolicy, accuracy, cross_accuracy
from .symmetry import MappingLearnConfig, MappingResult, learn_mapping
from .training import TrainConfig, TrainResult, max_filter, train

logger = logging.getLogger(__name__)

# larger is better for max_filter
FILTER_KEYS = {
    "loss": lambda r: -r.final_loss,
    "accuracy": lambda r: r.final_accuracy,
}


@dataclass(frozen=True)
class QedConfig:
    population: int = 10
    epsilon: float = 0.02
    max_outer_iterations: int = 10
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    map_cfg: MappingLearnConfig = field(default_factory=MappingLearnConfig)
    base_seed: int = 0
    filter_k_percent: float | None = 10.0
    filter_key: str = "loss"
    close_maps: bool = False

    def __post_init__(self):
        if self.population < 2:
            raise ValueError(f"population must be at least 2 for cross-play, got {self.population}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be positive")
        if self.filter_k_percent is not None and not 0 < self.filter_k_percent <= 100:
            raise ValueError("filter_k_percent must be in (0, 100]")
        if self.filter_key not in FILTER_KEYS:
            raise ValueError(f"filter_key must be one of {sorted(FILTER_KEYS)}")

    @property
    def pool_size(self) -> int:
        """Runs trained per generation before filtering down to ``population``."""
        if self.filter_k_percent is None:
            return self.population
        return math.ceil(self.population * 100.0 / self.filter_k_percent - 1e-9)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["train_cfg"] = self.train_cfg.to_dict()
        d["map_cfg"] = self.map_cfg.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "QedConfig":
        d = dict(data)
        d["train_cfg"] = TrainConfig.from_dict(d.get("train_cfg", {}))
        d["map_cfg"] = MappingLearnConfig.from_dict(d.get("map_cfg", {}))
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class QedResult:
    final_policy: JointPolicy
    mapping_set: MappingSet
    outer_trace: list[dict[str, Any]]
    converged: bool
    population: list[TrainResult]


def _probs(goal_dist: GoalDistribution | np.ndarray) -> np.ndarray:
    return goal_dist.probs if isinstance(goal_dist, GoalDistribution) else np.asarray(goal_dist)


def sp_score(population: Sequence[JointPolicy], goal_dist) -> tuple[float, float]:
    """Mean and std of each pair's accuracy with itself."""
    if not population:
        raise ValueError("empty population")
    p = _probs(goal_dist)
    acc = np.array([accuracy(j, p) for j in population])
    return float(acc.mean()), float(acc.std())


def xp_score(population: Sequence[JointPolicy], goal_dist) -> tuple[float, float]:
    """Mean and std over ordered pairs ``i != j`` of sender ``i`` with receiver ``j``."""
    if len(population) < 2:
        raise ValueError("cross-play needs at least two policies")
    p = _probs(goal_dist)
    acc = np.array(
        [
            cross_accuracy(a, b, p)
            for i, a in enumerate(population)
            for j, b in enumerate(population)
            if i != j
        ]
    )
    return float(acc.mean()), float(acc.std())


def converged(sp_mean: float, xp_mean: float, epsilon: float) -> bool:
    return xp_mean >= sp_mean - epsilon


def generation_seeds(cfg: QedConfig, iteration: int) -> list[int]:
    pool = cfg.pool_size
    return [cfg.base_seed + iteration * pool + i for i in range(pool)]


def map_seed(cfg: QedConfig, iteration: int, i: int, j: int) -> int:
    n = cfg.population
    return cfg.map_cfg.seed + cfg.base_seed * 7919 + iteration * n * n + i * n + j


def _train_job(args):
    task, maps, cfg = args
    return train(task, maps, cfg)


def _map_job(args):
    source, target, task, cfg = args
    return learn_mapping(source, target, task, cfg)


def train_population(
    task: TaskSpec,
    maps: MappingSet | None,
    train_cfg: TrainConfig,
    seeds: Sequence[int],
    filter_k_percent: float | None = None,
    workers: int | None = None,
    filter_key: str = "accuracy",
) -> tuple[list[TrainResult], list[TrainResult]]:
    """Train one run per seed; returns ``(survivors, all_runs)`` in seed order."""
    runs = pmap(_train_job, [(task, maps, train_cfg.with_seed(s)) for s in seeds], workers)
    if filter_k_percent is None:
        return runs, runs
    kept = max_filter(runs, filter_k_percent, key=FILTER_KEYS[filter_key])
    return sorted(kept, key=lambda r: r.seed), runs


def extract_maps(
    population: Sequence[JointPolicy],
    task: TaskSpec,
    cfg: QedConfig,
    iteration: int,
    workers: int | None = None,
) -> list[tuple[int, int, MappingResult]]:
    pairs = [(i, j) for i in range(len(population)) for j in range(len(population)) if i != j]
    jobs = [
        (population[i], population[j], task, cfg.map_cfg.with_seed(map_seed(cfg, iteration, i, j)))
        for i, j in pairs
    ]
    results = pmap(_map_job, jobs, workers)
    return [(i, j, r) for (i, j), r in zip(pairs, results)]


def qed_run(task: TaskSpec, cfg: QedConfig, workers: int | None = None, log=None) -> QedResult:
    """Alternate other-play training under the map set with map discovery until XP ~ SP."""
    maps = MappingSet.for_task(task)
    trace: list[dict[str, Any]] = []
    survivors: list[TrainResult] = []
    done = False
    for it in range(cfg.max_outer_iterations):
        train_maps = maps.closure() if cfg.close_maps else maps
        seeds = generation_seeds(cfg, it)
        survivors, _ = train_population(
            task, train_maps, cfg.train_cfg, seeds, cfg.filter_k_percent, workers, cfg.filter_key
        )
        if cfg.filter_k_percent is not None and len(survivors) > cfg.population:
            survivors = survivors[: cfg.population]
        pop = [r.joint for r in survivors]
        sp_m, sp_s = sp_score(pop, task.goal_dist)
        xp_m, xp_s = xp_score(pop, task.goal_dist)
        record: dict[str, Any] = {
            "iteration": it,
            "sp_mean": sp_m,
            "sp_std": sp_s,
            "xp_mean": xp_m,
            "xp_std": xp_s,
            "num_maps_trained_with": len(maps),
            "seeds": [r.seed for r in survivors],
        }
        if converged(sp_m, xp_m, cfg.epsilon):
            record.update(num_maps=len(maps), new_maps=0, rejected_invalid=0)
            trace.append(record)
            done = True
            break
        found = extract_maps(pop, task, cfg, it, workers)
        new = invalid = 0
        for i, j, res in found:
            if res.accepted:
                new += maps.add(
                    res.map,
                    source=f"iter{it}:pair({survivors[i].seed},{survivors[j].seed})",
                    hard_loss=res.hard_loss,
                )
            elif res.hard_loss < cfg.map_cfg.accept_threshold:
                invalid += 1
        record.update(num_maps=len(maps), new_maps=new, rejected_invalid=invalid)
        trace.append(record)
        if log:
            log(record)
        logger.info("qed iteration %d: %s", it, record)
    if done and log:
        log(trace[-1])
    return QedResult(survivors[0].joint, maps, trace, done, survivors)
