from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..dataset import Dataset, LabelMode


class NodeClassifier(ClassifierMixin, BaseEstimator):
    """Shared plumbing for the local classifiers.

    Labels are dense class ids ``0..n_classes-1``. ``n_classes`` defaults to
    ``max(y) + 1`` and is taken from the label mode when fitting a Dataset,
    so that every node's model predicts within the same label set even when a
    class is absent locally.

    Fitted models carry ``node_id_`` and ``label_mode_`` metadata for the
    federation layer (0 / None when fitted on bare arrays).
    """

    _kind: str = ""

    def _validate_fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if not np.issubdtype(np.asarray(y).dtype, np.number) or np.any(y != np.round(y)):
            raise ValueError("labels must be integer class ids")
        y = y.astype(np.int64)
        if y.min() < 0:
            raise ValueError("labels must be non-negative class ids")
        n_classes = int(self.n_classes) if self.n_classes is not None else int(y.max()) + 1
        if y.max() >= n_classes:
            raise ValueError(f"label {int(y.max())} outside 0..{n_classes - 1}")
        self.n_classes_ = n_classes
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = X.shape[1]
        if not hasattr(self, "node_id_"):
            self.node_id_ = 0
            self.label_mode_ = None
        return X, y

    def _validate_predict(self, X) -> np.ndarray:
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"{type(self).__name__} expects {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def fit_dataset(self, ds: Dataset):
        """Fit on a node's Dataset, recording its node id and label mode."""
        if self.n_classes is None:
            self.set_params(n_classes=ds.n_classes)
        self.node_id_ = ds.node_id
        self.label_mode_ = ds.label_mode
        return self.fit(ds.features, ds.labels)

    def predict_one(self, row) -> int:
        row = np.asarray(row, dtype=np.float64)
        if row.ndim != 1:
            raise ValueError("predict_one expects a single feature vector")
        return int(self.predict(row[None, :])[0])

    @property
    def kind(self) -> str:
        return self._kind


def label_mode_code(mode: LabelMode | None) -> int:
    return {None: 0, LabelMode.BINARY: 1, LabelMode.MULTICLASS: 2}[mode]


def label_mode_from_code(code: int) -> LabelMode | None:
    try:
        return {0: None, 1: LabelMode.BINARY, 2: LabelMode.MULTICLASS}[code]
    except KeyError:
        raise ValueError(f"unknown label mode code {code}") from None
