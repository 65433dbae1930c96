"""Experiment configuration: flat dotted keys with defaults, read from YAML or JSON."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .game import GOAL_KINDS, TASK_KINDS, CHANNELS, TaskSpec, build_task
from .qed import FILTER_KEYS, QedConfig
from .symmetry import MappingLearnConfig
from .training import TrainConfig, default_iterations

METHOD_NAMES = ("sp", "sp_max_filter", "op_given_symmetries", "qed", "max_class")

# dotted key -> (default, type). ``None`` defaults mean "derived from the task".
DEFAULTS: dict[str, tuple[Any, type]] = {
    "task": (None, str),
    "method": (None, str),
    "channel": ("costly", str),
    "goal_kind": ("zipfian", str),
    "population": (10, int),
    "base_seed": (0, int),
    "symmetries": ("analytic", str),
    "filter.k_percent": (10.0, float),
    "filter.key": ("loss", str),
    "train.learning_rate": (0.1, float),
    "train.iterations": (None, int),
    "train.entropy_weight": (1e-2, float),
    "train.energy_weight": (3e-1, float),
    "qed.epsilon": (0.02, float),
    "qed.max_outer_iterations": (10, int),
    "qed.close_maps": (False, bool),
    "map.steps": (2000, int),
    "map.learning_rate": (0.2, float),
    "map.accept_threshold": (1e-2, float),
    "map.seed": (0, int),
    "map.goal_weight": (100.0, float),
    "map.support_threshold": (1e-2, float),
    "map.optimizer": ("adam", str),
    "export.traces": (True, bool),
    "export.heatmaps": (False, bool),
    "export.maps": (True, bool),
}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source file when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path or '<config>'}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + message)


@dataclass(frozen=True)
class ExperimentConfig:
    task_kind: str
    method: str
    channel: str = "costly"
    goal_kind: str = "zipfian"
    population: int = 10
    base_seed: int = 0
    symmetries: str = "analytic"
    filter_k_percent: float = 10.0
    filter_key: str = "loss"
    train: TrainConfig = field(default_factory=TrainConfig)
    qed: QedConfig | None = None
    export_traces: bool = True
    export_heatmaps: bool = False
    export_maps: bool = True

    @property
    def task(self) -> TaskSpec:
        return build_task(self.task_kind, self.channel, self.goal_kind)

    def with_seed_offset(self, offset: int) -> "ExperimentConfig":
        if not offset:
            return self
        qed = None if self.qed is None else replace(self.qed, base_seed=self.qed.base_seed + offset)
        return replace(self, base_seed=self.base_seed + offset, qed=qed)

    def with_task(self, channel: str, goal_kind: str) -> "ExperimentConfig":
        return replace(self, channel=channel, goal_kind=goal_kind)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "task": self.task_kind,
            "method": self.method,
            "channel": self.channel,
            "goal_kind": self.goal_kind,
            "population": self.population,
            "base_seed": self.base_seed,
            "symmetries": self.symmetries,
            "filter.k_percent": self.filter_k_percent,
            "filter.key": self.filter_key,
            "export.traces": self.export_traces,
            "export.heatmaps": self.export_heatmaps,
            "export.maps": self.export_maps,
        }
        for k, v in self.train.to_dict().items():
            if k != "seed":
                d[f"train.{k}"] = v
        if self.qed is not None:
            d["qed.epsilon"] = self.qed.epsilon
            d["qed.max_outer_iterations"] = self.qed.max_outer_iterations
            d["qed.close_maps"] = self.qed.close_maps
            for k, v in self.qed.map_cfg.to_dict().items():
                d[f"map.{k}"] = v
        return d


def _line_of(text: str, key: str) -> int | None:
    top = key.split(".")[0]
    for pat in (rf'^\s*"?{re.escape(key)}"?\s*:', rf'^\s*"?{re.escape(top)}"?\s*:'):
        for i, line in enumerate(text.splitlines(), 1):
            if re.search(pat, line):
                return i
    return None


def _flatten(data: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value: Any, typ: type) -> Any:
    if typ is bool:
        if isinstance(value, bool):
            return value
        raise TypeError(f"{key} must be true or false")
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"{key} must be an integer")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise TypeError(f"{key} must be a string")
    return value


def parse_config(data: dict[str, Any], text: str = "", path: str | None = None) -> ExperimentConfig:
    """Validate a mapping of dotted keys (nested mappings are flattened first)."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of keys to values", 1, path)
    flat = _flatten(data)
    unknown = sorted(set(flat) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", _line_of(text, unknown[0]), path)
    vals: dict[str, Any] = {}
    for key, (default, typ) in DEFAULTS.items():
        if key in flat and flat[key] is not None:
            try:
                vals[key] = _coerce(key, flat[key], typ)
            except TypeError as exc:
                raise ConfigError(str(exc), _line_of(text, key), path) from None
        else:
            vals[key] = default
    for key in ("task", "method"):
        if vals[key] is None:
            raise ConfigError(f"missing required key {key!r}", None, path)

    def check(key: str, ok: bool, msg: str) -> None:
        if not ok:
            raise ConfigError(f"{key}: {msg}", _line_of(text, key), path)

    check("task", vals["task"] in TASK_KINDS, f"expected one of {list(TASK_KINDS)}")
    check("method", vals["method"] in METHOD_NAMES, f"expected one of {list(METHOD_NAMES)}")
    check("channel", vals["channel"] in CHANNELS, f"expected one of {list(CHANNELS)}")
    check("goal_kind", vals["goal_kind"] in GOAL_KINDS, f"expected one of {list(GOAL_KINDS)}")
    check("filter.key", vals["filter.key"] in FILTER_KEYS, f"expected one of {sorted(FILTER_KEYS)}")
    check("filter.k_percent", 0 < vals["filter.k_percent"] <= 100, "must be in (0, 100]")
    sym = vals["symmetries"]
    check("symmetries", sym == "analytic" or Path(sym).is_file(), "expected 'analytic' or an existing mapping-set file")
    n_min = 1 if vals["method"] == "max_class" else 2
    check("population", vals["population"] >= n_min, f"must be at least {n_min} so cross-play is defined")
    task = build_task(vals["task"], vals["channel"], vals["goal_kind"])
    if vals["train.iterations"] is None:
        vals["train.iterations"] = default_iterations(task)

    def build(key_prefix: str, fn):
        try:
            return fn()
        except ValueError as exc:
            bad = next((k for k in DEFAULTS if k.startswith(key_prefix) and k.split(".")[-1] in str(exc)), key_prefix)
            raise ConfigError(str(exc), _line_of(text, bad), path) from None

    train = build(
        "train.",
        lambda: TrainConfig(
            learning_rate=vals["train.learning_rate"],
            iterations=vals["train.iterations"],
            entropy_weight=vals["train.entropy_weight"],
            energy_weight=vals["train.energy_weight"],
        ),
    )
    qed = None
    if vals["method"] == "qed":
        map_cfg = build(
            "map.",
            lambda: MappingLearnConfig(
                steps=vals["map.steps"],
                learning_rate=vals["map.learning_rate"],
                accept_threshold=vals["map.accept_threshold"],
                seed=vals["map.seed"],
                goal_weight=vals["map.goal_weight"],
                support_threshold=vals["map.support_threshold"],
                optimizer=vals["map.optimizer"],
            ),
        )
        qed = build(
            "qed.",
            lambda: QedConfig(
                population=vals["population"],
                epsilon=vals["qed.epsilon"],
                max_outer_iterations=vals["qed.max_outer_iterations"],
                train_cfg=train,
                map_cfg=map_cfg,
                base_seed=vals["base_seed"],
                filter_k_percent=vals["filter.k_percent"],
                filter_key=vals["filter.key"],
                close_maps=vals["qed.close_maps"],
            ),
        )
    return ExperimentConfig(
        task_kind=vals["task"],
        method=vals["method"],
        channel=vals["channel"],
        goal_kind=vals["goal_kind"],
        population=vals["population"],
        base_seed=vals["base_seed"],
        symmetries=vals["symmetries"],
        filter_k_percent=vals["filter.k_percent"],
        filter_key=vals["filter.key"],
        train=train,
        qed=qed,
        export_traces=vals["export.traces"],
        export_heatmaps=vals["export.heatmaps"],
        export_maps=vals["export.maps"],
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a ``.json`` or YAML config file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from None
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, exc.lineno, str(p)) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(str(getattr(exc, "problem", exc)), mark.line + 1 if mark else None, str(p)) from None
    return parse_config(data if data is not None else {}, text, str(p))
