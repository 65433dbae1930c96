"""Exact expected losses, their gradients, and full-batch gradient descent."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Any, Sequence

import numpy as np

from .game import TaskSpec
from .maps import MappingSet
from .policy import JointPolicy, accuracy, init_joint, log_softmax_rows, softmax_rows

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
TRACE_STRIDE = 100


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    iterations: int = 5000
    entropy_weight: float = 1e-2
    energy_weight: float = 3e-1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        if self.entropy_weight < 0 or self.energy_weight < 0:
            raise ValueError("loss weights must be non-negative")

    def with_seed(self, seed: int) -> "TrainConfig":
        return TrainConfig(self.learning_rate, self.iterations, self.entropy_weight, self.energy_weight, int(seed))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def default_iterations(task: TaskSpec) -> int:
    return 10000 if task.kind == "energy_degeneracy" else 5000


@dataclass
class LossBreakdown:
    cross_entropy: float
    entropy_bonus: float
    energy: float
    total: float
    clamped: bool = False


@dataclass
class TrainResult:
    joint: JointPolicy
    trace: list[dict[str, float]] = field(default_factory=list)
    seed: int = 0

    @property
    def final_accuracy(self) -> float:
        return self.trace[-1]["accuracy"]

    @property
    def final_loss(self) -> float:
        return self.trace[-1]["total"]


def _perms(maps: MappingSet | None, task: TaskSpec) -> tuple[np.ndarray, np.ndarray]:
    if maps is None:
        return (np.arange(task.num_goals)[None, :], np.arange(task.num_actions)[None, :])
    if len(maps) == 0:
        raise ValueError("mapping set is empty")
    obs, act = maps.perm_arrays()
    if obs.shape[1] != task.num_goals or act.shape[1] != task.num_actions:
        raise ValueError("mapping set does not match the task dimensions")
    return obs, act


def _inverse_perms(perms: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perms)
    rows = np.arange(perms.shape[0])[:, None]
    inv[rows, perms] = np.arange(perms.shape[1])[None, :]
    return inv


def _evaluate(
    joint: JointPolicy,
    task: TaskSpec,
    obs: np.ndarray,
    act: np.ndarray,
    cfg: TrainConfig,
    want_grad: bool,
):
    """Loss averaged over the stacked maps and, optionally, its logit gradients.

    Map ``m`` feeds the receiver the relabeled sender
    ``S_m[obs[m, g], act[m, a]] = S[g, a]``.
    """
    p = task.goal_probs
    costs = task.costs
    n_maps = obs.shape[0]

    log_s = log_softmax_rows(joint.sender_logits)
    log_r = log_softmax_rows(joint.receiver_logits)
    s = np.exp(log_s)
    r = np.exp(log_r)

    inv_o = _inverse_perms(obs)
    inv_a = _inverse_perms(act)
    sm = s[inv_o[:, :, None], inv_a[:, None, :]]  # (M, G, A)
    log_sm = log_s[inv_o[:, :, None], inv_a[:, None, :]]

    diag = np.einsum("mga,ag->mg", sm, r)
    clamped = diag < LOG_FLOOR
    diag_safe = np.where(clamped, LOG_FLOOR, diag)
    ce = -(np.log(diag_safe) @ p)  # per map

    energy = np.einsum("g,mga,a->m", p, sm, costs)
    h_sender = -np.einsum("g,mga->m", p, sm * log_sm)
    h_recv_rows = -(r * log_r).sum(axis=1)  # (A,)
    q = np.einsum("g,mga->ma", p, sm)
    h_recv = q @ h_recv_rows
    ent = h_sender + h_recv

    w_h, w_e = cfg.entropy_weight, cfg.energy_weight
    total_m = ce - w_h * ent + w_e * energy
    breakdown = LossBreakdown(
        cross_entropy=float(ce.mean()),
        entropy_bonus=float(ent.mean()),
        energy=float(energy.mean()),
        total=float(total_m.mean()),
        clamped=bool(clamped.any()),
    )
    if not want_grad:
        return breakdown, None, None

    scale = 1.0 / n_maps
    inv_d = np.where(clamped, 0.0, 1.0 / diag_safe) * p[None, :]  # (M, G)
    # gradients with respect to the relabeled sender tables
    d_sm = -inv_d[:, :, None] * r.T[None, :, :]
    d_sm += w_e * p[None, :, None] * costs[None, None, :]
    d_sm += w_h * p[None, :, None] * (log_sm + 1.0)
    d_sm -= w_h * p[None, :, None] * h_recv_rows[None, None, :]
    d_sm *= scale
    # route back to the original sender indices: S[g, a] sits at S_m[obs[g], act[a]]
    d_s = d_sm[np.arange(n_maps)[:, None, None], obs[:, :, None], act[:, None, :]].sum(axis=0)

    d_r = -np.einsum("mga,mg->ag", sm, inv_d) * scale
    d_r += w_h * (q.sum(axis=0) * scale)[:, None] * (log_r + 1.0)

    g_sender = s * (d_s - (d_s * s).sum(axis=1, keepdims=True))
    g_receiver = r * (d_r - (d_r * r).sum(axis=1, keepdims=True))
    return breakdown, g_sender, g_receiver


def sp_loss(joint: JointPolicy, task: TaskSpec, cfg: TrainConfig) -> LossBreakdown:
    """Self-play loss: cross-entropy minus entropy bonus plus weighted energy."""
    joint.check_task(task)
    obs, act = _perms(None, task)
    return _evaluate(joint, task, obs, act, cfg, want_grad=False)[0]


def op_loss(joint: JointPolicy, task: TaskSpec, maps: MappingSet, cfg: TrainConfig) -> LossBreakdown:
    """Other-play loss: ``sp_loss`` averaged over the sender relabeled by every map."""
    joint.check_task(task)
    obs, act = _perms(maps, task)
    return _evaluate(joint, task, obs, act, cfg, want_grad=False)[0]


def gradients(
    joint: JointPolicy, task: TaskSpec, maps: MappingSet | None, cfg: TrainConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of the other-play total loss with respect to both logit tables."""
    joint.check_task(task)
    obs, act = _perms(maps, task)
    _, gs, gr = _evaluate(joint, task, obs, act, cfg, want_grad=True)
    return gs, gr


def train(
    task: TaskSpec,
    maps: MappingSet | None,
    cfg: TrainConfig,
    init: JointPolicy | None = None,
    backend: str = "compiled",
) -> TrainResult:
    """Full-batch gradient descent from ``init_joint(task, cfg.seed)``.

    The trace holds one record every ``TRACE_STRIDE`` steps plus the final step.
    ``backend="numpy"`` runs the slow reference loop built on ``gradients``.
    """
    obs, act = _perms(maps, task)
    joint = init.copy() if init is not None else init_joint(task, cfg.seed)
    joint.check_task(task)
    if backend == "compiled":
        return _train_compiled(task, obs, act, cfg, joint)
    if backend != "numpy":
        raise ValueError(f"unknown backend {backend!r}")

    trace: list[dict[str, float]] = []
    lr = cfg.learning_rate

    def record(it: int, loss: LossBreakdown) -> None:
        trace.append(
            {
                "iteration": it,
                "total": loss.total,
                "cross_entropy": loss.cross_entropy,
                "entropy": loss.entropy_bonus,
                "energy": loss.energy,
                "accuracy": accuracy(joint, task.goal_dist),
            }
        )

    for it in range(cfg.iterations):
        loss, gs, gr = _evaluate(joint, task, obs, act, cfg, want_grad=True)
        if not math.isfinite(loss.total) or not (np.all(np.isfinite(gs)) and np.all(np.isfinite(gr))):
            raise TrainingDiverged(
                f"non-finite loss at iteration {it} (seed {cfg.seed}, task {task.label}): {loss}"
            )
        if it % TRACE_STRIDE == 0:
            record(it, loss)
        joint.sender_logits -= lr * gs
        joint.receiver_logits -= lr * gr
    final = _evaluate(joint, task, obs, act, cfg, want_grad=False)[0]
    if not math.isfinite(final.total):
        raise TrainingDiverged(f"non-finite loss after iteration {cfg.iterations} (seed {cfg.seed})")
    record(cfg.iterations, final)
    return TrainResult(joint, trace, cfg.seed)


def _train_compiled(task, obs, act, cfg, joint) -> TrainResult:
    from ._kernel import TRACE_FIELDS, descend

    ls = np.ascontiguousarray(joint.sender_logits)
    lr_ = np.ascontiguousarray(joint.receiver_logits)
    rows, failed_at = descend(
        ls,
        lr_,
        np.ascontiguousarray(task.goal_probs),
        np.ascontiguousarray(task.costs),
        np.ascontiguousarray(obs, dtype=np.int64),
        np.ascontiguousarray(act, dtype=np.int64),
        float(cfg.learning_rate),
        int(cfg.iterations),
        float(cfg.entropy_weight),
        float(cfg.energy_weight),
        LOG_FLOOR,
        TRACE_STRIDE,
    )
    if failed_at >= 0:
        raise TrainingDiverged(
            f"non-finite loss at iteration {failed_at} (seed {cfg.seed}, task {task.label})"
        )
    trace = [
        {k: (int(v) if k == "iteration" else float(v)) for k, v in zip(TRACE_FIELDS, row)}
        for row in rows
    ]
    return TrainResult(JointPolicy(ls, lr_), trace, cfg.seed)


def max_filter(runs: Sequence[Any], k_percent: float, key=None, seed_of=None) -> list[Any]:
    """Keep the best ``ceil(k% * len(runs))`` runs by final accuracy.

    Ties go to the lower seed. By default each run is a ``TrainResult``; pass
    ``key``/``seed_of`` for other records such as ``(joint, accuracy, seed)`` tuples.
    """
    if not runs:
        raise ValueError("max_filter needs at least one run")
    if not 0 < k_percent <= 100:
        raise ValueError(f"k_percent must be in (0, 100], got {k_percent}")
    key = key or (lambda r: r.final_accuracy)
    seed_of = seed_of or (lambda r: r.seed)
    keep = math.ceil(k_percent / 100.0 * len(runs) - 1e-9)
    order = sorted(runs, key=lambda r: (-key(r), seed_of(r)))
    return list(order[:keep])
