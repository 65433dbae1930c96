"""Applying equivalence maps to policies, the mapping KL loss, and map discovery."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
from scipy.optimize import linear_sum_assignment

from .game import TaskSpec
from .maps import EquivalenceMap, MappingSet, invert
from .policy import JointPolicy, log_softmax_rows, softmax_rows

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class MappingLearnConfig:
    steps: int = 2000
    learning_rate: float = 0.2
    accept_threshold: float = 1e-2
    seed: int = 0
    init_std: float = 0.01
    support_threshold: float = 1e-2
    optimizer: str = "adam"
    goal_weight: float = 100.0

    def __post_init__(self):
        if not self.accept_threshold > 0:
            raise ValueError("accept_threshold must be positive")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def with_seed(self, seed: int) -> "MappingLearnConfig":
        d = asdict(self)
        d["seed"] = int(seed)
        return MappingLearnConfig(**d)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MappingLearnConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class RelaxedMap:
    """Row-stochastic stand-ins for the two permutation matrices.

    ``obs[g, g']`` is the weight on goal ``g`` going to ``g'``; likewise ``act``.
    """

    obs: np.ndarray
    act: np.ndarray

    @classmethod
    def from_map(cls, m: EquivalenceMap) -> "RelaxedMap":
        obs = np.zeros((m.num_goals, m.num_goals))
        obs[np.arange(m.num_goals), m.obs_perm] = 1.0
        act = np.zeros((m.num_actions, m.num_actions))
        act[np.arange(m.num_actions), m.act_perm] = 1.0
        return cls(obs, act)


def apply_map(m: EquivalenceMap, joint: JointPolicy) -> JointPolicy:
    """Relabel both agents: the sender's goals and actions, the receiver's actions and predictions."""
    if (m.num_goals, m.num_actions) != (joint.num_goals, joint.num_actions):
        raise ValueError(
            f"map is {m.num_goals}x{m.num_actions}, policy is {joint.num_goals}x{joint.num_actions}"
        )
    inv_o = np.array(invert(m.obs_perm))
    inv_a = np.array(invert(m.act_perm))
    sender = joint.sender_logits[inv_o][:, inv_a]
    receiver = joint.receiver_logits[inv_a][:, inv_o]
    return JointPolicy(sender, receiver)


def is_equivalence(m: EquivalenceMap, task: TaskSpec, tol: float = 1e-9) -> bool:
    """Does ``m`` preserve every action cost and every goal probability?"""
    if (m.num_goals, m.num_actions) != (task.num_goals, task.num_actions):
        return False
    costs = task.costs
    probs = task.goal_probs
    act_ok = np.all(np.abs(costs[list(m.act_perm)] - costs) <= tol)
    obs_ok = np.all(np.abs(probs[list(m.obs_perm)] - probs) <= tol)
    return bool(act_ok and obs_ok)


def _kl_terms(
    source: JointPolicy, target: JointPolicy, rel: RelaxedMap, probs: np.ndarray, goal_weight: float = 1.0
):
    """Mapping KL and the intermediate arrays its gradient needs.

    The relaxed target rows are renormalised so the loss stays a proper KL.
    """
    s_i = source.sender()
    r_i = source.receiver()
    log_s_i = log_softmax_rows(source.sender_logits)
    log_r_i = log_softmax_rows(source.receiver_logits)
    s_j = target.sender()
    r_j = target.receiver()
    q_i = probs @ s_i

    t = rel.obs @ s_j @ rel.act.T  # t[g, a] ~ target sender at (map(g), map(a))
    z_t = t.sum(axis=1, keepdims=True)
    t_safe = np.maximum(t, PROB_FLOOR)
    sender_kl = float(np.sum(probs[:, None] * s_i * (log_s_i - np.log(t_safe) + np.log(z_t))))

    u = rel.act @ r_j @ rel.obs.T  # u[a, h] ~ target receiver at (map(a), map(h))
    z_u = u.sum(axis=1, keepdims=True)
    u_safe = np.maximum(u, PROB_FLOOR)
    recv_kl = float(np.sum(q_i[:, None] * r_i * (log_r_i - np.log(u_safe) + np.log(z_u))))

    # goal draw: the environment's own distribution read through the goal map
    w = rel.obs @ probs
    z_w = w.sum()
    w_safe = np.maximum(w, PROB_FLOOR)
    goal_kl = float(np.sum(probs * (np.log(probs) - np.log(w_safe) + np.log(z_w))))
    parts = dict(
        s_i=s_i, r_i=r_i, s_j=s_j, r_j=r_j, q_i=q_i, t=t, t_safe=t_safe, z_t=z_t,
        u=u, u_safe=u_safe, z_u=z_u, w=w, w_safe=w_safe, z_w=z_w,
    )
    return goal_weight * goal_kl + sender_kl + recv_kl, parts


def mapping_kl(
    source: JointPolicy,
    target: JointPolicy,
    m: EquivalenceMap | RelaxedMap,
    probs: np.ndarray,
) -> float:
    """KL between the trajectories of ``source`` and those of ``target`` read through ``m``.

    Three parts: the goal distribution against its relabeled self, the sender
    rows weighted by goal probability, and the receiver rows weighted by the
    action marginal ``source`` induces. Zero exactly when
    ``target == apply_map(m, source)`` on every row with positive weight and
    the goal map preserves goal probabilities.
    """
    rel = RelaxedMap.from_map(m) if isinstance(m, EquivalenceMap) else m
    return _kl_terms(source, target, rel, np.asarray(probs, dtype=float))[0]


def _kl_grads(source, target, rel, probs, goal_weight):
    loss, x = _kl_terms(source, target, rel, probs, goal_weight)
    # d loss / d t and d loss / d u, ignoring the floor
    d_t = probs[:, None] * (-x["s_i"] / x["t_safe"] * (x["t"] >= PROB_FLOOR) + 1.0 / x["z_t"])
    d_u = x["q_i"][:, None] * (-x["r_i"] / x["u_safe"] * (x["u"] >= PROB_FLOOR) + 1.0 / x["z_u"])
    s_j, r_j = x["s_j"], x["r_j"]
    d_w = goal_weight * (-probs / x["w_safe"] * (x["w"] >= PROB_FLOOR) + 1.0 / x["z_w"])
    d_obs = d_t @ rel.act @ s_j.T + d_u.T @ rel.act @ r_j + np.outer(d_w, probs)
    d_act = d_t.T @ rel.obs @ s_j + d_u @ rel.obs @ r_j.T
    return loss, d_obs, d_act


def _softmax_backward(probs: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return probs * (grad - (grad * probs).sum(axis=1, keepdims=True))


def harden(weights: np.ndarray) -> tuple[int, ...]:
    """Permutation maximising the summed log-weights (exact assignment)."""
    cost = -np.log(np.maximum(weights, PROB_FLOOR))
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    if sorted(perm.tolist()) != list(range(len(perm))):
        raise RuntimeError("assignment did not return a bijection")
    return tuple(int(v) for v in perm)


def _complete_unsupported(
    act_perm: tuple[int, ...], weights: np.ndarray, support: np.ndarray, task: TaskSpec
) -> tuple[int, ...]:
    """Reassign actions the source never uses.

    Their rows carry no trajectory weight, so the policies say nothing about
    where they go. Among the leftover targets, prefer same-cost partners and
    break remaining ties with the relaxed weights.
    """
    free = [a for a in range(len(act_perm)) if not support[a]]
    if not free:
        return act_perm
    taken = {act_perm[a] for a in range(len(act_perm)) if support[a]}
    open_targets = [b for b in range(len(act_perm)) if b not in taken]
    costs = task.costs
    mismatch = np.abs(costs[free][:, None] - costs[open_targets][None, :]) > 1e-9
    cost = -np.log(np.maximum(weights[np.ix_(free, open_targets)], PROB_FLOOR)) + 1e6 * mismatch
    rows, cols = linear_sum_assignment(cost)
    out = list(act_perm)
    for r, c in zip(rows, cols):
        out[free[r]] = open_targets[c]
    return tuple(out)


def _fit_numpy(theta_o, theta_a, source, target, probs, cfg: MappingLearnConfig) -> None:
    lr = cfg.learning_rate
    adam = cfg.optimizer == "adam"
    if adam:
        b1, b2, eps = 0.9, 0.999, 1e-8
        m_o = np.zeros_like(theta_o)
        v_o = np.zeros_like(theta_o)
        m_a = np.zeros_like(theta_a)
        v_a = np.zeros_like(theta_a)

    for step in range(1, cfg.steps + 1):
        p_o = softmax_rows(theta_o)
        p_a = softmax_rows(theta_a)
        _, d_po, d_pa = _kl_grads(source, target, RelaxedMap(p_o, p_a), probs, cfg.goal_weight)
        g_o = _softmax_backward(p_o, d_po)
        g_a = _softmax_backward(p_a, d_pa)
        if adam:
            m_o = b1 * m_o + (1 - b1) * g_o
            v_o = b2 * v_o + (1 - b2) * g_o**2
            m_a = b1 * m_a + (1 - b1) * g_a
            v_a = b2 * v_a + (1 - b2) * g_a**2
            c1 = 1 - b1**step
            c2 = 1 - b2**step
            theta_o -= lr * (m_o / c1) / (np.sqrt(v_o / c2) + eps)
            theta_a -= lr * (m_a / c1) / (np.sqrt(v_a / c2) + eps)
        else:
            theta_o -= lr * g_o
            theta_a -= lr * g_a


@dataclass
class MappingResult:
    map: EquivalenceMap
    hard_loss: float
    accepted: bool
    relaxed_loss: float
    valid: bool


def learn_mapping(
    source: JointPolicy,
    target: JointPolicy,
    task: TaskSpec,
    cfg: MappingLearnConfig,
    backend: str = "compiled",
) -> MappingResult:
    """Find the relabeling that turns ``source`` into ``target``.

    Relaxed goal/action maps are fitted by gradient descent on ``mapping_kl``,
    hardened by exact assignment, and re-scored as hard permutations.
    """
    source.check_task(task)
    target.check_task(task)
    probs = task.goal_probs
    g, a = task.num_goals, task.num_actions
    rng = np.random.default_rng(cfg.seed)
    theta_o = rng.normal(0.0, cfg.init_std, size=(g, g))
    theta_a = rng.normal(0.0, cfg.init_std, size=(a, a))
    if backend == "compiled":
        from ._kernel import fit_relaxed_map

        fit_relaxed_map(
            theta_o,
            theta_a,
            source.sender(),
            source.receiver(),
            target.sender(),
            target.receiver(),
            np.ascontiguousarray(probs),
            float(cfg.goal_weight),
            PROB_FLOOR,
            float(cfg.learning_rate),
            int(cfg.steps),
            cfg.optimizer == "adam",
        )
    elif backend == "numpy":
        _fit_numpy(theta_o, theta_a, source, target, probs, cfg)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    rel = RelaxedMap(softmax_rows(theta_o), softmax_rows(theta_a))
    relaxed_loss = mapping_kl(source, target, rel, probs)
    obs_perm = harden(rel.obs)
    act_perm = harden(rel.act)
    support = (probs @ source.sender()) >= cfg.support_threshold
    act_perm = _complete_unsupported(act_perm, rel.act, support, task)
    hard = EquivalenceMap(obs_perm, act_perm)
    hard_loss = mapping_kl(source, target, hard, probs)
    valid = is_equivalence(hard, task)
    accepted = hard_loss < cfg.accept_threshold and valid
    if hard_loss < cfg.accept_threshold and not valid:
        logger.warning("map with loss %.3g fails the equivalence check; rejected", hard_loss)
    return MappingResult(hard, float(hard_loss), bool(accepted), float(relaxed_loss), valid)
