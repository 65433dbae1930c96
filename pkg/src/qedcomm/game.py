"""Referential game instances: goal distributions, action costs and the benchmark tasks."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

TASK_KINDS = ("no_degeneracy", "energy_degeneracy")
CHANNELS = ("costly", "cheap_talk")
GOAL_KINDS = ("zipfian", "uniform")

NUM_GOALS = 5
ZIPF_EXPONENT = 1.0


@dataclass(frozen=True)
class GoalDistribution:
    probs: np.ndarray
    kind: str = "zipfian"
    exponent: float | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("goal probabilities must be a non-empty vector")
        if np.any(probs <= 0):
            raise ValueError("goal probabilities must be strictly positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"goal probabilities sum to {probs.sum()!r}, not 1")

    @property
    def num_goals(self) -> int:
        return int(self.probs.size)

    def entropy(self) -> float:
        """Shannon entropy in nats."""
        return float(-(self.probs * np.log(self.probs)).sum())


def zipf_distribution(n: int, exponent: float = ZIPF_EXPONENT) -> GoalDistribution:
    """Zipf law over ``n`` ranked goals: ``p[k]`` proportional to ``(k + 1) ** -exponent``.

    An exponent of zero gives the uniform distribution.
    """
    if n < 1:
        raise ValueError(f"need at least one goal, got n={n}")
    if exponent < 0:
        raise ValueError(f"exponent must be non-negative, got {exponent}")
    weights = np.arange(1, n + 1, dtype=float) ** -float(exponent)
    probs = weights / weights.sum()
    kind = "uniform" if exponent == 0 else "zipfian"
    return GoalDistribution(probs, kind=kind, exponent=float(exponent))


def uniform_distribution(n: int) -> GoalDistribution:
    if n < 1:
        raise ValueError(f"need at least one goal, got n={n}")
    return GoalDistribution(np.full(n, 1.0 / n), kind="uniform", exponent=0.0)


@dataclass(frozen=True)
class TaskSpec:
    """One referential game: who says what, and what each message costs."""

    kind: str
    channel: str
    goal_kind: str
    goal_dist: GoalDistribution
    costs: np.ndarray = field(repr=False)

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=float)
        costs.setflags(write=False)
        object.__setattr__(self, "costs", costs)
        if costs.ndim != 1 or costs.size == 0:
            raise ValueError("costs must be a non-empty vector")
        if np.any(costs < 0):
            raise ValueError("action costs must be non-negative")
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.channel == "cheap_talk" and np.any(costs != 0):
            raise ValueError("cheap-talk channel requires all costs to be zero")

    @property
    def num_goals(self) -> int:
        return self.goal_dist.num_goals

    @property
    def num_actions(self) -> int:
        return int(self.costs.size)

    @property
    def goal_probs(self) -> np.ndarray:
        return self.goal_dist.probs

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "channel": self.channel,
            "goal_kind": self.goal_kind,
            "num_goals": self.num_goals,
            "num_actions": self.num_actions,
            "costs": [float(c) for c in self.costs],
            "goal_probs": [float(p) for p in self.goal_probs],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TaskSpec":
        probs = np.asarray(data["goal_probs"], dtype=float)
        costs = np.asarray(data["costs"], dtype=float)
        if len(probs) != int(data["num_goals"]) or len(costs) != int(data["num_actions"]):
            raise ValueError("task document sizes disagree with its arrays")
        kind = data["goal_kind"]
        exponent = 0.0 if kind == "uniform" else ZIPF_EXPONENT
        dist = GoalDistribution(probs, kind=kind, exponent=exponent)
        return cls(data["kind"], data["channel"], kind, dist, costs)

    def fingerprint(self) -> str:
        """Short stable hash of the serialized task."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def label(self) -> str:
        return f"{self.kind}/{self.channel}/{self.goal_kind}"


def build_task(kind: str, channel: str = "costly", goal_kind: str = "zipfian") -> TaskSpec:
    """Construct one of the two benchmark tasks or an ablation of it.

    ``no_degeneracy`` has 10 actions with costs 0..9. ``energy_degeneracy`` has
    17 actions: one free action and four classes of four actions costing 1..4.
    """
    if kind == "no_degeneracy":
        costs = np.arange(10, dtype=float)
    elif kind == "energy_degeneracy":
        costs = np.concatenate([[0.0], np.repeat(np.arange(1, 5, dtype=float), 4)])
    else:
        raise ValueError(f"unknown task kind {kind!r}; expected one of {TASK_KINDS}")
    if channel not in CHANNELS:
        raise ValueError(f"unknown channel {channel!r}; expected one of {CHANNELS}")
    if channel == "cheap_talk":
        costs = np.zeros_like(costs)
    if goal_kind == "zipfian":
        dist = zipf_distribution(NUM_GOALS, ZIPF_EXPONENT)
    elif goal_kind == "uniform":
        dist = uniform_distribution(NUM_GOALS)
    else:
        raise ValueError(f"unknown goal kind {goal_kind!r}; expected one of {GOAL_KINDS}")
    return TaskSpec(kind, channel, goal_kind, dist, costs)


def cost_classes(task: TaskSpec) -> list[list[int]]:
    """Partition action indices by equal cost, cheapest class first."""
    classes: dict[float, list[int]] = {}
    for a, c in enumerate(task.costs):
        classes.setdefault(float(c), []).append(a)
    return [classes[c] for c in sorted(classes)]
