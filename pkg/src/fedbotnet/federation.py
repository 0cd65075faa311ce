"""Edge aggregation of node models by majority vote, plus communication accounting.

Nodes never hand their data to the edge. The only object that crosses the
node boundary is a :class:`ModelUpdate`, whose payload is a serialized model
and whose remaining fields are scalar metadata.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array

from .dataset import DataError, Dataset, to_csv_bytes
from .evaluation import AccuracyMatrix, accuracy, row_average, timed_train
from .models import NodeClassifier, TrainerSpec, deserialize_model, serialize_model


@dataclass(frozen=True)
class ModelUpdate:
    node_id: int
    payload: bytes
    payload_bytes: int
    training_time: float
    train_rows: int

    def __post_init__(self):
        if not isinstance(self.payload, bytes):
            raise TypeError("a model update carries serialized model bytes only")
        if self.payload_bytes != len(self.payload):
            raise ValueError(f"payload_bytes={self.payload_bytes} but payload has {len(self.payload)} bytes")

    def model(self) -> NodeClassifier:
        return deserialize_model(self.payload)


def local_train_round(train: Dataset, trainer: TrainerSpec, timing: str = "wall") -> ModelUpdate:
    """Fit on one node and package the result for the edge."""
    if train.n_rows == 0:
        raise DataError(f"node {train.node_id}: empty training split")
    model, seconds = timed_train(trainer, train, timing)
    return update_from_model(model, seconds, train.n_rows)


def update_from_model(model: NodeClassifier, training_time: float, train_rows: int) -> ModelUpdate:
    payload = serialize_model(model)
    return ModelUpdate(int(model.node_id_), payload, len(payload), float(training_time), int(train_rows))


class MajorityVoteEnsemble(ClassifierMixin, BaseEstimator):
    """Hard-voting ensemble of already fitted node models.

    Each member votes its predicted class with its weight; the class with the
    largest tally wins, ties going to the lowest class id. ``fit`` is a no-op
    apart from validation since members arrive pre-trained.
    """

    def __init__(self, members=(), weights=None):
        self.members = members
        self.weights = weights

    def fit(self, X=None, y=None):
        members = list(self.members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        n_features = {m.n_features_in_ for m in members}
        n_classes = {m.n_classes_ for m in members}
        modes = {m.label_mode_ for m in members}
        if len(n_features) != 1 or len(n_classes) != 1 or len(modes) != 1:
            raise ValueError("ensemble members disagree on features, classes or label mode")
        w = np.ones(len(members)) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(members),) or (w < 0).any() or not w.sum() > 0:
            raise ValueError("member weights must be non-negative, one per member, with a positive sum")
        self.members_ = members
        self.weights_ = w
        self.n_features_in_ = n_features.pop()
        self.n_classes_ = n_classes.pop()
        self.classes_ = np.arange(self.n_classes_)
        self.label_mode_ = modes.pop()
        return self

    def member_votes(self, X) -> np.ndarray:
        """(n_members, n_rows) matrix of member predictions."""
        if not hasattr(self, "members_"):
            self.fit()
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"ensemble expects {self.n_features_in_} features, got {X.shape[1]}")
        return np.stack([m.predict(X) for m in self.members_])

    def vote_tally(self, X) -> np.ndarray:
        votes = self.member_votes(X)
        tally = np.zeros((votes.shape[1], self.n_classes_))
        rows = np.arange(votes.shape[1])
        for w, v in zip(self.weights_, votes):
            tally[rows, v] += w
        return tally

    def predict(self, X):
        return np.argmax(self.vote_tally(X), axis=1)

    def predict_one(self, row) -> int:
        return int(self.predict(np.asarray(row, dtype=np.float64)[None, :])[0])


EnsembleModel = MajorityVoteEnsemble


def aggregate(updates: Sequence[ModelUpdate], weights=None) -> MajorityVoteEnsemble:
    """Edge step: decode node updates into an ensemble ordered by node id.

    Members are weighted equally unless ``weights`` (indexed in node-id order)
    is given.
    """
    updates = list(updates)
    if not updates:
        raise ValueError("aggregate needs at least one model update")
    for u in updates:
        if not isinstance(u, ModelUpdate):
            raise TypeError(f"the edge only accepts ModelUpdate objects, got {type(u).__name__}")
    ordered = sorted(updates, key=lambda u: u.node_id)
    members = [u.model() for u in ordered]
    return MajorityVoteEnsemble(members, weights).fit()


def diagonal_weights(matrix: AccuracyMatrix) -> np.ndarray:
    """Member weights from each node model's accuracy on its own test split.

    Performance-weighted voting is an extension beyond equal-weight voting.
    """
    return matrix.diagonal


def ensemble_predict(e: MajorityVoteEnsemble, row) -> int:
    return e.predict_one(row)


@dataclass(frozen=True)
class CommunicationSummary:
    total_update_bytes: int
    total_raw_train_bytes: int
    ratio: float

    def to_dict(self) -> dict:
        return {"total_update_bytes": self.total_update_bytes, "total_raw_train_bytes": self.total_raw_train_bytes,
                "ratio": self.ratio}


def raw_train_bytes(train: Dataset) -> int:
    """Bytes the node would have sent had it shipped its training split as CSV."""
    return len(to_csv_bytes(train))


def communication_cost(updates: Sequence[ModelUpdate], raw_sizes: Sequence[int]) -> CommunicationSummary:
    if not updates:
        raise ValueError("no model updates to account for")
    if len(updates) != len(raw_sizes):
        raise ValueError(f"{len(updates)} updates but {len(raw_sizes)} raw sizes")
    if any(int(s) < 0 for s in raw_sizes):
        raise ValueError("raw sizes must be non-negative")
    total_updates = sum(u.payload_bytes for u in updates)
    total_raw = sum(int(s) for s in raw_sizes)
    if total_raw == 0:
        raise ValueError("total raw size is zero; ratio undefined")
    return CommunicationSummary(total_updates, total_raw, total_updates / total_raw)


@dataclass(frozen=True)
class NodeFederationResult:
    node_id: int
    avg_accuracy_per_node: float
    ensemble_accuracy: float | None


@dataclass(frozen=True)
class FederationReport:
    nodes: tuple[NodeFederationResult, ...]
    communication: CommunicationSummary | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "avg_accuracy_per_node", "ensemble_accuracy"])
        for r in self.nodes:
            ens = "" if r.ensemble_accuracy is None else repr(float(r.ensemble_accuracy))
            w.writerow([r.node_id, repr(float(r.avg_accuracy_per_node)), ens])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"node": r.node_id, "avg_accuracy_per_node": r.avg_accuracy_per_node,
                 "ensemble_accuracy": r.ensemble_accuracy}
                for r in self.nodes
            ],
            "communication": None if self.communication is None else self.communication.to_dict(),
        }


def evaluate_federation(e: MajorityVoteEnsemble, matrix: AccuracyMatrix, tests: Sequence[Dataset],
                        communication: CommunicationSummary | None = None) -> FederationReport:
    """Per node: row average of its model across the network vs. the ensemble on its test split."""
    if not hasattr(e, "members_"):
        e.fit()
    if not (len(e.members_) == matrix.n_nodes == len(tests)):
        raise ValueError(f"{len(e.members_)} members, {matrix.n_nodes}x{matrix.n_nodes} matrix, {len(tests)} test sets")
    averages = row_average(matrix)
    nodes = []
    for avg, test in zip(averages, tests):
        acc = accuracy(e, test)
        nodes.append(NodeFederationResult(test.node_id, float(avg), acc))
    return FederationReport(tuple(nodes), communication)


def report_from_matrix(matrix: AccuracyMatrix) -> FederationReport:
    """Report row averages for a published or stored matrix when no models are at hand."""
    return FederationReport(tuple(
        NodeFederationResult(i, float(a), None) for i, a in zip(matrix.node_ids, row_average(matrix))
    ))


def run_federation(trains: Sequence[Dataset], trainer: TrainerSpec, rounds: int = 1, timing: str = "wall",
                   weights=None) -> tuple[MajorityVoteEnsemble, list[ModelUpdate]]:
    """Local training on every node, then edge aggregation, repeated ``rounds`` times.

    Returns the last round's ensemble and every update sent across all rounds
    (what the network carried). Nodes retrain from their own data each round.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    sent: list[ModelUpdate] = []
    ensemble = None
    for _ in range(rounds):
        updates = [local_train_round(tr, trainer, timing) for tr in trains]
        sent.extend(updates)
        ensemble = aggregate(updates, weights)
    return ensemble, sent
