"""Local classifiers trained on each node, plus their wire format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

from ..dataset import DataError, Dataset
from ._base import NodeClassifier
from .knn import KNNClassifier, KnnParams
from .logistic import LogisticParams, LogisticRegressionClassifier, loss_and_gradient, softmax
from .serialization import (
    FORMAT_VERSION,
    ModelFormatError,
    deserialize_model,
    model_to_dict,
    model_to_json,
    serialize_model,
)
from .tree import DecisionTreeClassifier, Internal, Leaf, Split, TreeParams, find_best_split, gini_impurity

TrainedModel = NodeClassifier

# Name -> estimator class. A LinearSVM trainer would register here.
TRAINERS: dict[str, type[NodeClassifier]] = {
    "tree": DecisionTreeClassifier,
    "knn": KNNClassifier,
    "logistic": LogisticRegressionClassifier,
}


def register_trainer(name: str, estimator_cls: type[NodeClassifier]) -> None:
    TRAINERS[name] = estimator_cls


@dataclass(frozen=True)
class TrainerSpec:
    """Which classifier to fit and with which constructor parameters."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TRAINERS:
            raise ValueError(f"unknown model kind {self.kind!r}; choose from {sorted(TRAINERS)}")
        # fail on bad parameter names early rather than at fit time
        TRAINERS[self.kind](**self.params)

    def build(self) -> NodeClassifier:
        return TRAINERS[self.kind](**self.params)

    def fit(self, train: Dataset) -> NodeClassifier:
        if train.n_rows == 0:
            raise DataError(f"node {train.node_id}: cannot train on an empty dataset")
        return self.build().fit_dataset(train)


def train_decision_tree(train: Dataset, params: TreeParams = TreeParams(), standardize: bool = False):
    p = asdict(params)
    p.pop("impurity")
    return TrainerSpec("tree", dict(p, standardize=standardize)).fit(train)


def train_knn(train: Dataset, params: KnnParams = KnnParams()):
    if params.k > train.n_rows:
        raise DataError(f"k={params.k} exceeds the {train.n_rows} training rows of node {train.node_id}")
    return TrainerSpec("knn", {"k": params.k}).fit(train)


def train_logistic(train: Dataset, params: LogisticParams = LogisticParams()):
    if len(set(train.labels.tolist())) < 2:
        raise DataError(f"node {train.node_id}: logistic regression needs at least two classes")
    return TrainerSpec("logistic", asdict(params)).fit(train)


def predict(model: NodeClassifier, row) -> int:
    return model.predict_one(row)


def predict_batch(model: NodeClassifier, rows):
    return model.predict(rows)


__all__ = [
    "DecisionTreeClassifier",
    "FORMAT_VERSION",
    "Internal",
    "KNNClassifier",
    "KnnParams",
    "Leaf",
    "LogisticParams",
    "LogisticRegressionClassifier",
    "ModelFormatError",
    "NodeClassifier",
    "Split",
    "TRAINERS",
    "TrainedModel",
    "TrainerSpec",
    "TreeParams",
    "deserialize_model",
    "find_best_split",
    "gini_impurity",
    "loss_and_gradient",
    "model_to_dict",
    "model_to_json",
    "predict",
    "predict_batch",
    "register_trainer",
    "serialize_model",
    "softmax",
    "train_decision_tree",
    "train_knn",
    "train_logistic",
]
