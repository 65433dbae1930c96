"""Equivalence maps (paired goal/action permutations) and ordered sets of them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

import numpy as np

from .game import TaskSpec, cost_classes


def _as_perm(values: Iterable[int], name: str) -> tuple[int, ...]:
    perm = tuple(int(v) for v in values)
    if sorted(perm) != list(range(len(perm))):
        raise ValueError(f"{name} is not a permutation: {perm}")
    return perm


def invert(perm: Iterable[int]) -> tuple[int, ...]:
    perm = list(perm)
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


@dataclass(frozen=True)
class EquivalenceMap:
    """``obs_perm[g]`` is where goal ``g`` is sent, ``act_perm[a]`` where action ``a`` is sent."""

    obs_perm: tuple[int, ...]
    act_perm: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "obs_perm", _as_perm(self.obs_perm, "obs_perm"))
        object.__setattr__(self, "act_perm", _as_perm(self.act_perm, "act_perm"))

    @classmethod
    def identity(cls, num_goals: int, num_actions: int) -> "EquivalenceMap":
        return cls(tuple(range(num_goals)), tuple(range(num_actions)))

    @classmethod
    def action_swap(cls, num_goals: int, num_actions: int, a: int, b: int) -> "EquivalenceMap":
        act = list(range(num_actions))
        act[a], act[b] = b, a
        return cls(tuple(range(num_goals)), tuple(act))

    @property
    def num_goals(self) -> int:
        return len(self.obs_perm)

    @property
    def num_actions(self) -> int:
        return len(self.act_perm)

    def is_identity(self) -> bool:
        return self.obs_perm == tuple(range(self.num_goals)) and self.act_perm == tuple(
            range(self.num_actions)
        )

    def inverse(self) -> "EquivalenceMap":
        return EquivalenceMap(invert(self.obs_perm), invert(self.act_perm))

    def compose(self, other: "EquivalenceMap") -> "EquivalenceMap":
        """``self`` after ``other``."""
        return EquivalenceMap(
            tuple(self.obs_perm[i] for i in other.obs_perm),
            tuple(self.act_perm[i] for i in other.act_perm),
        )

    def to_dict(self) -> dict[str, list[int]]:
        return {"obs_perm": list(self.obs_perm), "act_perm": list(self.act_perm)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EquivalenceMap":
        return cls(tuple(data["obs_perm"]), tuple(data["act_perm"]))


@dataclass
class MappingSet:
    """Ordered, duplicate-free collection of maps that always holds the identity.

    ``provenance`` runs parallel to ``maps`` and records where each map came from.
    """

    maps: list[EquivalenceMap]
    provenance: list[dict[str, Any]] = field(default_factory=list)

    def __post_init__(self):
        if not self.maps:
            raise ValueError("a mapping set needs at least the identity map")
        sizes = {(m.num_goals, m.num_actions) for m in self.maps}
        if len(sizes) != 1:
            raise ValueError(f"maps of mixed sizes: {sorted(sizes)}")
        g, a = sizes.pop()
        ident = EquivalenceMap.identity(g, a)
        maps, prov = [], []
        provenance = list(self.provenance) + [{}] * (len(self.maps) - len(self.provenance))
        for m, p in zip(self.maps, provenance):
            if m not in maps:
                maps.append(m)
                prov.append(p)
        if ident not in maps:
            maps.insert(0, ident)
            prov.insert(0, {"source": "identity"})
        self.maps = maps
        self.provenance = prov

    @classmethod
    def identity(cls, num_goals: int, num_actions: int) -> "MappingSet":
        return cls([EquivalenceMap.identity(num_goals, num_actions)], [{"source": "identity"}])

    @classmethod
    def for_task(cls, task: TaskSpec) -> "MappingSet":
        return cls.identity(task.num_goals, task.num_actions)

    def __len__(self) -> int:
        return len(self.maps)

    def __iter__(self) -> Iterator[EquivalenceMap]:
        return iter(self.maps)

    def __contains__(self, item: object) -> bool:
        return item in self.maps

    def add(self, m: EquivalenceMap, **provenance: Any) -> bool:
        """Append ``m`` unless already present; returns whether it was new."""
        if m in self.maps:
            return False
        self.maps.append(m)
        self.provenance.append(dict(provenance))
        return True

    def copy(self) -> "MappingSet":
        return MappingSet(list(self.maps), [dict(p) for p in self.provenance])

    def closure(self, limit: int = 10_000) -> "MappingSet":
        """Group generated by the maps (composition and inverses)."""
        out = self.copy()
        frontier = list(out.maps)
        while frontier:
            new = []
            for x in frontier:
                for y in list(out.maps):
                    for z in (x.compose(y), y.compose(x), x.inverse()):
                        if out.add(z, source="closure"):
                            new.append(z)
                            if len(out) > limit:
                                raise ValueError(f"closure exceeds {limit} maps")
            frontier = new
        return out

    def perm_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (maps x goals) and (maps x actions) forward permutations."""
        obs = np.array([m.obs_perm for m in self.maps], dtype=np.intp)
        act = np.array([m.act_perm for m in self.maps], dtype=np.intp)
        return obs, act

    def to_dict(self) -> dict[str, Any]:
        return {
            "maps": [m.to_dict() for m in self.maps],
            "provenance": [dict(p) for p in self.provenance],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MappingSet":
        maps = [EquivalenceMap.from_dict(d) for d in data["maps"]]
        return cls(maps, list(data.get("provenance", [])))


def class_transpositions(task: TaskSpec) -> MappingSet:
    """Every transposition of two equal-cost actions, plus the identity.

    These generate the ground-truth action symmetries handed to the
    other-play baseline. Goals are fixed unless the goal distribution is flat,
    in which case adjacent goal transpositions are added as well.
    """
    g, a = task.num_goals, task.num_actions
    out = MappingSet.identity(g, a)
    for cls_ in cost_classes(task):
        for i, x in enumerate(cls_):
            for y in cls_[i + 1 :]:
                out.add(EquivalenceMap.action_swap(g, a, x, y), source="analytic")
    probs = task.goal_probs
    for i in range(g - 1):
        if probs[i] == probs[i + 1]:
            obs = list(range(g))
            obs[i], obs[i + 1] = i + 1, i
            out.add(EquivalenceMap(tuple(obs), tuple(range(a))), source="analytic")
    return out
