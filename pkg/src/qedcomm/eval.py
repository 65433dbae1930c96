"""Cross-play matrices, baselines, information diagnostics and table aggregation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.cluster.hierarchy import DisjointSet

from .game import GoalDistribution, TaskSpec
from .maps import MappingSet
from .policy import JointPolicy, accuracy_of, compose, log_softmax_rows

METHODS = ("max_class", "sp", "sp_max_filter", "op_given_symmetries", "qed")
TABLE_HEADER = ("method", "task", "condition", "metric", "mean", "std", "n")


def _probs(goal_dist: GoalDistribution | np.ndarray) -> np.ndarray:
    return goal_dist.probs if isinstance(goal_dist, GoalDistribution) else np.asarray(goal_dist, dtype=float)


def crossplay_matrix(population: Sequence[JointPolicy], goal_dist) -> np.ndarray:
    """``M[i, j]`` is the accuracy of sender ``i`` talking to receiver ``j``."""
    if not population:
        raise ValueError("empty population")
    p = _probs(goal_dist)
    senders = [j.sender() for j in population]
    receivers = [j.receiver() for j in population]
    n = len(population)
    out = np.empty((n, n))
    for i in range(n):
        for k in range(n):
            out[i, k] = accuracy_of(senders[i], receivers[k], p)
    return out


def offdiag_stats(matrix: np.ndarray) -> tuple[float, float]:
    n = matrix.shape[0]
    if n < 2:
        raise ValueError("cross-play needs at least two policies")
    vals = matrix[~np.eye(n, dtype=bool)]
    return float(vals.mean()), float(vals.std())


def max_class_baseline(goal_dist) -> float:
    """Accuracy of a receiver that ignores the message and guesses the likeliest goal."""
    return float(np.max(_probs(goal_dist)))


def orbits(maps: MappingSet | Iterable, num_actions: int) -> list[list[int]]:
    """Connected components of ``a ~ act_perm(a)`` over every map, ordered by smallest member."""
    ds = DisjointSet(range(num_actions))
    for m in maps:
        if m.num_actions != num_actions:
            raise ValueError("map size does not match num_actions")
        for a, b in enumerate(m.act_perm):
            ds.merge(a, b)
    return sorted((sorted(s) for s in ds.subsets()), key=lambda s: s[0])


def orbit_labels(maps: MappingSet | Iterable, num_actions: int) -> np.ndarray:
    labels = np.empty(num_actions, dtype=int)
    for k, orbit in enumerate(orbits(maps, num_actions)):
        labels[orbit] = k
    return labels


def mutual_information(joint_table: np.ndarray) -> float:
    """I(X; Y) in nats for a joint probability table."""
    pxy = np.asarray(joint_table, dtype=float)
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    mask = pxy > 0
    mi = float(np.sum(pxy[mask] * (np.log(pxy[mask]) - np.log((px @ py)[mask]))))
    return max(mi, 0.0)


@dataclass(frozen=True)
class InfoDecomposition:
    mutual_info: float
    sender_cross_entropy: float
    sender_cross_entropy_scaled: float
    expected_cost: float
    goal_entropy: float
    num_orbits: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "InfoDecomposition":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


def info_decomposition(joint: JointPolicy, maps: MappingSet, task: TaskSpec) -> InfoDecomposition:
    """Split the sender's behaviour into goal/orbit information, uniformity and energy.

    ``sender_cross_entropy`` is the goal-weighted cross-entropy between the uniform
    distribution over actions and the sender row; the ``_scaled`` variant multiplies
    it by the number of actions.
    """
    joint.check_task(task)
    p = task.goal_probs
    s = joint.sender()
    labels = orbit_labels(maps, task.num_actions)
    n_orbits = int(labels.max()) + 1
    table = np.zeros((task.num_goals, n_orbits))
    for k in range(n_orbits):
        table[:, k] = p * s[:, labels == k].sum(axis=1)
    # a single orbit carries no information at all; avoid rounding noise
    mi = 0.0 if n_orbits == 1 else mutual_information(table)
    log_s = log_softmax_rows(joint.sender_logits)
    ce = float(np.sum(p * -log_s.mean(axis=1)))
    cost = float(np.sum(p[:, None] * s * task.costs[None, :]))
    return InfoDecomposition(
        mutual_info=mi,
        sender_cross_entropy=ce,
        sender_cross_entropy_scaled=ce * task.num_actions,
        expected_cost=cost,
        goal_entropy=task.goal_dist.entropy(),
        num_orbits=n_orbits,
    )


@dataclass
class ExperimentReport:
    """Everything one method produced on one task."""

    method: str
    task: TaskSpec
    seeds: list[int] = field(default_factory=list)
    sp_accuracies: list[float] = field(default_factory=list)
    crossplay: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    diagnostics: list[InfoDecomposition] = field(default_factory=list)
    policies: list[JointPolicy] = field(default_factory=list)
    mapping_set: MappingSet | None = None
    config: dict[str, Any] = field(default_factory=dict)
    traces: dict[str, Any] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        n = len(self.sp_accuracies)
        self.crossplay = np.asarray(self.crossplay, dtype=float)
        if self.crossplay.size == 0:
            self.crossplay = self.crossplay.reshape(n, n)
        if self.crossplay.shape != (n, n):
            raise ValueError("crossplay must be N x N for N per-seed records")
        if len(self.seeds) != n:
            raise ValueError("seeds and sp_accuracies differ in length")

    @property
    def n(self) -> int:
        return len(self.sp_accuracies) if self.method != "max_class" else 1

    @property
    def condition(self) -> str:
        return f"{self.task.channel}/{self.task.goal_kind}"

    @property
    def sp_mean(self) -> float:
        if self.method == "max_class":
            return max_class_baseline(self.task.goal_dist)
        return float(np.mean(self.sp_accuracies))

    @property
    def sp_std(self) -> float:
        return 0.0 if self.method == "max_class" else float(np.std(self.sp_accuracies))

    @property
    def xp_mean(self) -> float:
        if self.method == "max_class":
            return max_class_baseline(self.task.goal_dist)
        return offdiag_stats(self.crossplay)[0]

    @property
    def xp_std(self) -> float:
        return 0.0 if self.method == "max_class" else offdiag_stats(self.crossplay)[1]

    def summary(self) -> dict[str, float]:
        return {"sp_mean": self.sp_mean, "sp_std": self.sp_std, "xp_mean": self.xp_mean, "xp_std": self.xp_std}

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "task": self.task.to_dict(),
            "task_fingerprint": self.task.fingerprint(),
            "summary": self.summary(),
            "seeds": list(self.seeds),
            "sp_accuracies": [float(x) for x in self.sp_accuracies],
            "crossplay": self.crossplay.tolist(),
            "diagnostics": [d.to_dict() for d in self.diagnostics],
            "policies": [j.to_dict(self.task) for j in self.policies],
            "mapping_set": None if self.mapping_set is None else self.mapping_set.to_dict(),
            "config": self.config,
            "traces": self.traces,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentReport":
        task = TaskSpec.from_dict(data["task"])
        if "task_fingerprint" in data and data["task_fingerprint"] != task.fingerprint():
            raise ValueError("report task does not match its fingerprint")
        ms = data.get("mapping_set")
        return cls(
            method=data["method"],
            task=task,
            seeds=list(data.get("seeds", [])),
            sp_accuracies=list(data.get("sp_accuracies", [])),
            crossplay=np.asarray(data.get("crossplay", []), dtype=float),
            diagnostics=[InfoDecomposition.from_dict(d) for d in data.get("diagnostics", [])],
            policies=[JointPolicy.from_dict(d) for d in data.get("policies", [])],
            mapping_set=None if ms is None else MappingSet.from_dict(ms),
            config=data.get("config", {}),
            traces=data.get("traces", {}),
            metadata=data.get("metadata", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TableRow:
    method: str
    task: str
    condition: str
    metric: str
    mean: float | None
    std: float | None
    n: int

    def as_tuple(self) -> tuple:
        return (self.method, self.task, self.condition, self.metric, self.mean, self.std, self.n)


def aggregate(reports: Sequence[ExperimentReport]) -> list[TableRow]:
    """One SP and one XP row per report, plus any diagnostics the report carries.

    Reports sharing a (task, condition) column must agree on the task fingerprint,
    and a (method, task, condition) cell may appear only once.
    """
    prints: dict[tuple[str, str], str] = {}
    seen: set[tuple[str, str, str]] = set()
    rows: list[TableRow] = []
    order = {m: i for i, m in enumerate(METHODS)}
    for r in sorted(reports, key=lambda r: (order[r.method], r.task.kind, r.condition)):
        col = (r.task.kind, r.condition)
        fp = r.task.fingerprint()
        if prints.setdefault(col, fp) != fp:
            raise ValueError(f"reports for {col} disagree on the task definition")
        cell = (r.method, r.task.kind, r.condition)
        if cell in seen:
            raise ValueError(f"duplicate report for method={r.method} task={r.task.kind} condition={r.condition}")
        seen.add(cell)
        base = (r.method, r.task.kind, r.condition)
        rows.append(TableRow(*base, "train_sp", r.sp_mean, r.sp_std, r.n))
        rows.append(TableRow(*base, "test_xp", r.xp_mean, r.xp_std, r.n))
        if r.diagnostics:
            for metric in ("mutual_info", "goal_entropy", "expected_cost", "sender_cross_entropy"):
                vals = np.array([getattr(d, metric) for d in r.diagnostics])
                rows.append(TableRow(*base, metric, float(vals.mean()), float(vals.std()), len(vals)))
        elif r.method != "max_class":
            rows.append(TableRow(*base, "mutual_info", None, None, 0))
    return rows


def rows_to_csv(rows: Iterable[TableRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for row in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row.as_tuple()])
    return buf.getvalue()


def _fmt(mean: float | None, std: float | None) -> str:
    if mean is None:
        return ""
    return f"{mean:.2f} ± {std:.3f}"


def render_table(rows: Sequence[TableRow]) -> str:
    """Methods down the side, one (train SP, test XP) column pair per task/condition."""
    cols = sorted({(r.task, r.condition) for r in rows})
    methods = [m for m in METHODS if any(r.method == m for r in rows)]
    cell = {(r.method, r.task, r.condition, r.metric): r for r in rows}
    header = ["method"] + [f"{t} [{c}] {m}" for t, c in cols for m in ("SP", "XP")]
    body = []
    for m in methods:
        line = [m]
        for t, c in cols:
            for metric in ("train_sp", "test_xp"):
                r = cell.get((m, t, c, metric))
                line.append(_fmt(r.mean, r.std) if r else "")
        body.append(line)
    widths = [max(len(x[i]) for x in [header] + body) for i in range(len(header))]
    fmt = lambda line: " | ".join(x.ljust(w) for x, w in zip(line, widths)).rstrip()
    out = [fmt(header), "-+-".join("-" * w for w in widths)]
    out += [fmt(line) for line in body]
    return "\n".join(out) + "\n"


def ablation_grid(reports: Sequence[ExperimentReport], metric: str = "xp") -> dict[tuple[str, str], tuple[float, float]]:
    """``{(channel, goal_kind): (mean, std)}`` for the 2x2 ablation layout."""
    grid = {}
    for r in reports:
        key = (r.task.channel, r.task.goal_kind)
        if key in grid:
            raise ValueError(f"duplicate ablation cell {key}")
        grid[key] = (r.xp_mean, r.xp_std) if metric == "xp" else (r.sp_mean, r.sp_std)
    return grid


def _write_matrix(path: Path, matrix: np.ndarray, row_prefix: str, col_prefix: str) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + [f"{col_prefix}{k}" for k in range(matrix.shape[1])])
        for i, row in enumerate(matrix):
            w.writerow([f"{row_prefix}{i}"] + [repr(float(v)) for v in row])


def export_heatmaps(
    joint: JointPolicy,
    out_dir: str | Path,
    partner: JointPolicy | None = None,
) -> list[Path]:
    """Write sender, receiver and confusion matrices as CSV; with ``partner``, also its XP confusion."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s, r = joint.sender(), joint.receiver()
    files = [out / "sender.csv", out / "receiver.csv", out / "confusion.csv"]
    _write_matrix(files[0], s, "goal", "action")
    _write_matrix(files[1], r, "action", "goal")
    _write_matrix(files[2], compose(s, r), "goal", "guess")
    if partner is not None:
        files.append(out / "xp_confusion.csv")
        _write_matrix(files[3], compose(s, partner.receiver()), "goal", "guess")
    return files


def read_matrix(path: str | Path) -> np.ndarray:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]])


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())

