"""Accuracy/timing measurement, cross-node matrices and the accuracy-vs-time score."""
from __future__ import annotations

import csv
import io
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import DataError, Dataset
from .models import NodeClassifier, TrainerSpec

# nominal cost of one work unit when timing="work"
SECONDS_PER_WORK_UNIT = 1e-9
TIMING_MODES = ("wall", "work")

_TIMING_LOCK = threading.Lock()


def accuracy(model: NodeClassifier, test: Dataset) -> float:
    if test.n_rows == 0:
        raise DataError(f"node {test.node_id}: empty test set")
    if test.n_features != model.n_features_in_:
        raise DataError(f"model expects {model.n_features_in_} features, node {test.node_id} has {test.n_features}")
    return float(np.mean(model.predict(test.features) == test.labels))


def timed_train(trainer: TrainerSpec, train: Dataset, timing: str = "wall") -> tuple[NodeClassifier, float]:
    """Fit and return the model with the seconds spent in the fit call alone.

    Timed fits are serialized process-wide so concurrent training does not
    skew measurements. ``timing="work"`` reports a deterministic cost
    (``work_units_ * SECONDS_PER_WORK_UNIT``) instead of wall-clock time,
    which makes whole runs reproducible byte for byte.
    """
    if timing not in TIMING_MODES:
        raise ValueError(f"timing must be one of {TIMING_MODES}")
    model = trainer.build()
    with _TIMING_LOCK:
        start = time.perf_counter_ns()
        try:
            model.fit_dataset(train)
        except ValueError as exc:
            raise DataError(f"node {train.node_id}: {trainer.kind} training failed: {exc}") from exc
        elapsed = time.perf_counter_ns() - start
    if timing == "work":
        return model, max(1, model.work_units_) * SECONDS_PER_WORK_UNIT
    return model, max(elapsed, 1) * 1e-9


# ---------------------------------------------------------------------------
# Cross-node accuracy
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AccuracyMatrix:
    """Row = training node, column = evaluation node."""

    values: np.ndarray
    model_kind: str = ""
    node_ids: tuple[int, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"accuracy matrix must be square, got shape {v.shape}")
        if not ((v >= 0) & (v <= 1)).all():
            raise ValueError("accuracy entries must lie in [0, 1]")
        v.setflags(write=False)
        ids = tuple(int(i) for i in self.node_ids) or tuple(range(1, v.shape[0] + 1))
        if len(ids) != v.shape[0]:
            raise ValueError("node_ids length does not match the matrix size")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "node_ids", ids)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["train_node"] + [f"node_{i}" for i in self.node_ids])
        for i, row in zip(self.node_ids, self.values.tolist()):
            w.writerow([f"node_{i}"] + [repr(x) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, model_kind: str = "") -> "AccuracyMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if len(rows) < 2:
            raise DataError("accuracy matrix CSV needs a header and at least one row")
        ids = [int(h.strip().removeprefix("node_")) for h in rows[0][1:]]
        values = []
        for lineno, r in enumerate(rows[1:], start=2):
            if int(r[0].strip().removeprefix("node_")) != ids[lineno - 2]:
                raise DataError(f"line {lineno}: row label {r[0]!r} out of order")
            try:
                values.append([float(x) for x in r[1:]])
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
        return cls(np.array(values), model_kind, tuple(ids))

    def to_dict(self) -> dict:
        return {"model_kind": self.model_kind, "node_ids": list(self.node_ids), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "AccuracyMatrix":
        return cls(np.array(doc["values"]), doc.get("model_kind", ""), tuple(doc.get("node_ids", ())))


def accuracy_matrix(models: Sequence[NodeClassifier], tests: Sequence[Dataset], model_kind: str = "",
                    jobs: int = 1) -> AccuracyMatrix:
    """Evaluate every fitted node model on every node's test split."""
    if len(models) != len(tests):
        raise DataError(f"{len(models)} models for {len(tests)} test sets")
    if len(models) < 2:
        raise DataError("a cross-node matrix needs at least two nodes")
    dims = {t.n_features for t in tests} | {m.n_features_in_ for m in models}
    if len(dims) != 1:
        raise DataError(f"feature dimensions differ across nodes: {sorted(dims)}")
    cells = [(i, j) for i in range(len(models)) for j in range(len(tests))]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        acc = list(pool.map(lambda ij: accuracy(models[ij[0]], tests[ij[1]]), cells))
    return AccuracyMatrix(np.array(acc).reshape(len(models), len(tests)), model_kind,
                          tuple(t.node_id for t in tests))


def cross_node_matrix(trainer: TrainerSpec, federations: Sequence[tuple[Dataset, Dataset]],
                      jobs: int = 1) -> AccuracyMatrix:
    """Train on each node's train split, evaluate on every node's test split."""
    if len(federations) < 2:
        raise DataError("a cross-node matrix needs at least two nodes")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        models = list(pool.map(lambda tt: trainer.fit(tt[0]), federations))
    return accuracy_matrix(models, [te for _, te in federations], trainer.kind, jobs=jobs)


def row_average(m: AccuracyMatrix) -> np.ndarray:
    return m.values.mean(axis=1)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def weighted_average(values, weights) -> float:
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if v.shape != w.shape or v.ndim != 1:
        raise ValueError("values and weights must be vectors of equal length")
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ValueError("weights must have a positive sum")
    return float((w * v).sum() / total)


def min_max_normalize(values, invert: bool = False) -> np.ndarray:
    """Rescale to [0, 1]; ``invert`` maps the minimum to 1 (lower is better).

    All-equal inputs map to 0.5.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("min-max normalization needs at least two values")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full(v.shape, 0.5)
    out = (v - lo) / (hi - lo)
    return 1.0 - out if invert else out


@dataclass(frozen=True)
class ScoreWeights:
    accuracy_weight: float = 0.5
    training_time_weight: float = 0.5

    def __post_init__(self):
        for name in ("accuracy_weight", "training_time_weight"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if abs(self.accuracy_weight + self.training_time_weight - 1.0) > 1e-12:
            raise ValueError("score weights must sum to 1")

    @classmethod
    def parse(cls, text: str) -> "ScoreWeights":
        """Parse ``"acc:time"``, e.g. ``"0.5:0.5"`` or ``"70:30"`` (percent)."""
        try:
            a, t = (float(x) for x in text.split(":"))
        except ValueError:
            raise ValueError(f"weights must look like 'acc:time', got {text!r}") from None
        total = a + t
        if a < 0 or t < 0 or total <= 0:
            raise ValueError(f"invalid weights {text!r}")
        if abs(total - 1.0) > 1e-12 and abs(total - 100.0) > 1e-9:
            raise ValueError(f"weights {text!r} must sum to 1 or 100")
        return cls(a / total, t / total)


def score(normalized_accuracy: float, normalized_training_time: float, w: ScoreWeights = ScoreWeights()) -> float:
    for name, x in (("normalized_accuracy", normalized_accuracy), ("normalized_training_time", normalized_training_time)):
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"{name}={x} outside [0, 1]")
    return w.accuracy_weight * normalized_accuracy + w.training_time_weight * normalized_training_time


@dataclass(frozen=True)
class NodeMetrics:
    node_id: int
    accuracy: float
    training_time: float
    train_rows: int

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        if not self.training_time > 0:
            raise ValueError("training_time must be positive")
        if self.train_rows < 1:
            raise ValueError("train_rows must be positive")


@dataclass(frozen=True)
class ModelScore:
    model: str
    weighted_avg_accuracy: float
    weighted_avg_time: float
    normalized_accuracy: float
    normalized_training_time: float
    score: float


SCORE_COLUMNS = ("model", "weighted_avg_accuracy", "weighted_avg_time", "normalized_accuracy",
                 "normalized_training_time", "score")


@dataclass(frozen=True)
class ScoreCard:
    entries: tuple[ModelScore, ...]
    weights: ScoreWeights = field(default_factory=ScoreWeights)

    @property
    def ranking(self) -> list[str]:
        return [e.model for e in self.entries]

    def __getitem__(self, model: str) -> ModelScore:
        for e in self.entries:
            if e.model == model:
                return e
        raise KeyError(model)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for e in self.entries:
            w.writerow([e.model] + [repr(float(getattr(e, c))) for c in SCORE_COLUMNS[1:]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "weights": {"accuracy": self.weights.accuracy_weight, "training_time": self.weights.training_time_weight},
            "models": [{c: getattr(e, c) for c in SCORE_COLUMNS} for e in self.entries],
        }


def score_models(metrics: Mapping[str, Sequence[NodeMetrics]], w: ScoreWeights = ScoreWeights()) -> ScoreCard:
    """Rank models by the weighted accuracy / training-time score.

    Per model, accuracy and time are averaged over nodes weighted by training
    rows; both are then min-max normalized across models (time inverted) and
    combined with ``w``. Equal scores are ordered by higher accuracy, then name.
    """
    names = list(metrics)
    if len(names) < 2:
        raise ValueError("scoring needs at least two models")
    node_sets = {name: sorted(m.node_id for m in metrics[name]) for name in names}
    reference = node_sets[names[0]]
    for name in names:
        if not metrics[name]:
            raise ValueError(f"model {name!r} has no node metrics")
        if node_sets[name] != reference:
            raise ValueError(f"model {name!r} covers nodes {node_sets[name]}, expected {reference}")
    acc = [weighted_average([m.accuracy for m in metrics[n]], [m.train_rows for m in metrics[n]]) for n in names]
    tim = [weighted_average([m.training_time for m in metrics[n]], [m.train_rows for m in metrics[n]]) for n in names]
    n_acc = min_max_normalize(acc)
    n_time = min_max_normalize(tim, invert=True)
    entries = [
        ModelScore(name, acc[i], tim[i], float(n_acc[i]), float(n_time[i]), score(n_acc[i], n_time[i], w))
        for i, name in enumerate(names)
    ]
    entries.sort(key=lambda e: (-e.score, -e.weighted_avg_accuracy, e.model))
    return ScoreCard(tuple(entries), w)


def metrics_to_csv(rows: Sequence[NodeMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "accuracy", "training_time", "train_rows"])
    for m in rows:
        w.writerow([m.node_id, repr(float(m.accuracy)), repr(float(m.training_time)), m.train_rows])
    return buf.getvalue()


def metrics_from_csv(text: str) -> list[NodeMetrics]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for lineno, r in enumerate(reader, start=2):
        try:
            out.append(NodeMetrics(int(r["node"]), float(r["accuracy"]), float(r["training_time"]),
                                   int(r["train_rows"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"node metrics line {lineno}: {exc}") from None
    if not out:
        raise DataError("node metrics CSV has no rows")
    return out


def long_format_csv(rows: Sequence[tuple[str, str, str, float]]) -> str:
    """Plot-ready ``model,node,metric,value`` table."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "node", "metric", "value"])
    for model, node, metric, value in rows:
        v = value if isinstance(value, str) else repr(float(value))
        w.writerow([model, node, metric, v])
    return buf.getvalue()


def to_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"

