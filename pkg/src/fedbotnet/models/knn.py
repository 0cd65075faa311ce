"""Brute-force k-nearest-neighbour classifier (Euclidean)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..preprocess import Scaler
from ._base import NodeClassifier

_BLOCK_CELLS = 8_000_000


@dataclass(frozen=True)
class KnnParams:
    k: int = 5
    metric: str = "euclidean"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.metric != "euclidean":
            raise ValueError("only the Euclidean metric is supported")


class KNNClassifier(NodeClassifier):
    """Lazy learner: stores the (standardized) training rows.

    Neighbours are ranked by exact squared distance, ties going to the lower
    training-row index; the vote goes to the most frequent class, ties to the
    lowest class id.
    """

    _kind = "knn"

    def __init__(self, k=5, standardize=True, n_classes=None):
        self.k = k
        self.standardize = standardize
        self.n_classes = n_classes

    def fit(self, X, y):
        KnnParams(self.k)
        X, y = self._validate_fit(X, y)
        if self.k > X.shape[0]:
            raise ValueError(f"k={self.k} exceeds the {X.shape[0]} training rows")
        if self.standardize:
            self.scaler_ = Scaler().fit(X)
            X = self.scaler_.transform(X)
        else:
            self.scaler_ = None
        self.fit_X_ = X
        self.fit_y_ = y
        self.work_units_ = X.size
        return self

    def kneighbors(self, X) -> np.ndarray:
        """Indices of the k nearest stored rows for every query, nearest first."""
        X = self._validate_predict(X)
        if self.scaler_ is not None:
            X = self.scaler_.transform(X)
        ref = self.fit_X_
        k = self.k
        ref_sq = np.einsum("ij,ij->i", ref, ref)
        ref_sq_max = ref_sq.max()
        out = np.empty((X.shape[0], k), dtype=np.int64)
        block = max(1, _BLOCK_CELLS // max(1, ref.shape[0]))
        for start in range(0, X.shape[0], block):
            Q = X[start:start + block]
            q_sq = np.einsum("ij,ij->i", Q, Q)
            # expanded form is only used to shortlist; ranks come from exact distances
            approx = q_sq[:, None] + ref_sq[None, :] - 2.0 * (Q @ ref.T)
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
            slack = 1e-9 * (q_sq + ref_sq_max) + 1e-12
            for r in range(Q.shape[0]):
                cand = np.flatnonzero(approx[r] <= kth[r] + slack[r])
                diff = ref[cand] - Q[r]
                exact = np.einsum("ij,ij->i", diff, diff)
                out[start + r] = cand[np.lexsort((cand, exact))[:k]]
        return out

    def predict(self, X):
        labels = self.fit_y_[self.kneighbors(X)]
        votes = np.zeros((labels.shape[0], self.n_classes_), dtype=np.int64)
        np.add.at(votes, (np.arange(labels.shape[0])[:, None], labels), 1)
        return np.argmax(votes, axis=1)
