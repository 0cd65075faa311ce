"""Per-feature standardization fitted on a training split."""
from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import DataError, Dataset


class Scaler(TransformerMixin, BaseEstimator):
    """Standardize columns to zero mean and unit population standard deviation.

    Constant columns are stored with a standard deviation of 1 so they map
    to 0 instead of dividing by zero.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a scaler on zero rows")
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)  # ddof=0
        std[std == 0.0] = 1.0
        self.scale_ = std
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_array(X, dtype=np.float64)
        return X * self.scale_ + self.mean_

    @property
    def means(self) -> np.ndarray:
        return self.mean_

    @property
    def stds(self) -> np.ndarray:
        return self.scale_

    @property
    def n_features(self) -> int:
        return self.n_features_in_

    @classmethod
    def from_moments(cls, means, stds) -> "Scaler":
        means = np.asarray(means, dtype=np.float64).ravel()
        stds = np.asarray(stds, dtype=np.float64).ravel()
        if means.shape != stds.shape:
            raise ValueError("means and stds must have equal length")
        if not (stds > 0).all():
            raise ValueError("every stored std must be positive")
        s = cls()
        s.mean_, s.scale_, s.n_features_in_ = means, stds, means.shape[0]
        return s

    def to_json(self) -> str:
        check_is_fitted(self, "scale_")
        doc = {"n_features": int(self.n_features_in_), "means": self.mean_.tolist(), "stds": self.scale_.tolist()}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scaler":
        doc = json.loads(text)
        s = cls.from_moments(doc["means"], doc["stds"])
        if s.n_features_in_ != doc.get("n_features", s.n_features_in_):
            raise ValueError("n_features does not match the stored vectors")
        return s


def fit_scaler(train: Dataset) -> Scaler:
    if train.n_rows == 0:
        raise DataError("cannot fit a scaler on an empty dataset")
    return Scaler().fit(train.features)


def apply_scaler(s: Scaler, ds: Dataset) -> Dataset:
    if ds.n_features != s.n_features_in_:
        raise DataError(f"scaler expects {s.n_features_in_} features, dataset has {ds.n_features}")
    return ds.replace(features=s.transform(ds.features))
