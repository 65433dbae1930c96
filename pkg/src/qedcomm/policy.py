"""Tabular softmax sender/receiver policies and the quantities derived from them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .game import GoalDistribution, TaskSpec

INIT_STD = 0.1


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting each row's max."""
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax_rows got non-finite logits")
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class JointPolicy:
    """Sender logits (goals x actions) and receiver logits (actions x goals)."""

    sender_logits: np.ndarray
    receiver_logits: np.ndarray

    def __post_init__(self):
        self.sender_logits = np.asarray(self.sender_logits, dtype=float)
        self.receiver_logits = np.asarray(self.receiver_logits, dtype=float)
        g, a = self.sender_logits.shape
        if self.receiver_logits.shape != (a, g):
            raise ValueError(
                f"receiver logits shape {self.receiver_logits.shape} does not match "
                f"sender logits shape {self.sender_logits.shape}"
            )

    @property
    def num_goals(self) -> int:
        return self.sender_logits.shape[0]

    @property
    def num_actions(self) -> int:
        return self.sender_logits.shape[1]

    def sender(self) -> np.ndarray:
        return softmax_rows(self.sender_logits)

    def receiver(self) -> np.ndarray:
        return softmax_rows(self.receiver_logits)

    def copy(self) -> "JointPolicy":
        return JointPolicy(self.sender_logits.copy(), self.receiver_logits.copy())

    def check_task(self, task: TaskSpec) -> None:
        if (self.num_goals, self.num_actions) != (task.num_goals, task.num_actions):
            raise ValueError(
                f"policy is {self.num_goals}x{self.num_actions} but task "
                f"{task.label} is {task.num_goals}x{task.num_actions}"
            )

    def to_dict(self, task: TaskSpec | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {
            "num_goals": self.num_goals,
            "num_actions": self.num_actions,
            "sender_logits": self.sender_logits.tolist(),
            "receiver_logits": self.receiver_logits.tolist(),
        }
        if task is not None:
            out["task_fingerprint"] = task.fingerprint()
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "JointPolicy":
        return cls(np.array(data["sender_logits"], dtype=float), np.array(data["receiver_logits"], dtype=float))


def init_joint(task: TaskSpec, seed: int) -> JointPolicy:
    """Small Gaussian logits from a generator seeded by ``seed``."""
    rng = np.random.default_rng(seed)
    sender = rng.normal(0.0, INIT_STD, size=(task.num_goals, task.num_actions))
    receiver = rng.normal(0.0, INIT_STD, size=(task.num_actions, task.num_goals))
    return JointPolicy(sender, receiver)


def compose(sender_probs: np.ndarray, receiver_probs: np.ndarray) -> np.ndarray:
    """Confusion matrix ``p(predicted | true)`` of a sender and a receiver table."""
    return sender_probs @ receiver_probs


def confusion(joint: JointPolicy) -> np.ndarray:
    return compose(joint.sender(), joint.receiver())


def accuracy_of(sender_probs: np.ndarray, receiver_probs: np.ndarray, probs: np.ndarray) -> float:
    # einsum keeps this O(G*A) instead of forming the full confusion matrix
    return float(np.einsum("g,ga,ag->", probs, sender_probs, receiver_probs))


def accuracy(joint: JointPolicy, goal_dist: GoalDistribution | np.ndarray) -> float:
    """Probability mass the composed policies put on the true goal, averaged over goals."""
    probs = goal_dist.probs if isinstance(goal_dist, GoalDistribution) else np.asarray(goal_dist)
    return accuracy_of(joint.sender(), joint.receiver(), probs)


def cross_accuracy(a: JointPolicy, b: JointPolicy, goal_dist: GoalDistribution | np.ndarray) -> float:
    """Accuracy of ``a``'s sender talking to ``b``'s receiver."""
    probs = goal_dist.probs if isinstance(goal_dist, GoalDistribution) else np.asarray(goal_dist)
    return accuracy_of(a.sender(), b.receiver(), probs)
