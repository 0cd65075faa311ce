"""Multinomial logistic regression trained by full-batch gradient descent."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..preprocess import Scaler
from ._base import NodeClassifier


@dataclass(frozen=True)
class LogisticParams:
    learning_rate: float = 0.1
    epochs: int = 200
    l2: float = 1e-4
    tolerance: float = 1e-6

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")


def add_bias(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([X, np.ones((X.shape[0], 1))])


def softmax(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    e = np.exp(Z - Z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def loss_and_gradient(W, Xb, y, l2) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus (l2/2)·||W||² and its gradient.

    ``W`` is (n_classes, n_features + 1); ``Xb`` already carries the bias
    column. The bias weights are penalized like the rest.
    """
    Z = Xb @ W.T
    Z = Z - Z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(Z).sum(axis=1))
    n = Xb.shape[0]
    rows = np.arange(n)
    loss = float((log_norm - Z[rows, y]).mean() + 0.5 * l2 * np.sum(W * W))
    P = np.exp(Z - log_norm[:, None])
    P[rows, y] -= 1.0
    grad = P.T @ Xb / n + l2 * W
    return loss, grad


class LogisticRegressionClassifier(NodeClassifier):
    """Softmax regression from zero weights.

    A step that would raise the loss is rejected and the learning rate halved,
    so the recorded ``loss_history_`` never increases. Training stops after
    ``epochs`` iterations or once an accepted step improves the loss by less
    than ``tolerance``.
    """

    _kind = "logistic"

    def __init__(self, learning_rate=0.1, epochs=200, l2=1e-4, tolerance=1e-6, standardize=True, n_classes=None):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2
        self.tolerance = tolerance
        self.standardize = standardize
        self.n_classes = n_classes

    def fit(self, X, y):
        LogisticParams(self.learning_rate, self.epochs, self.l2, self.tolerance)
        X, y = self._validate_fit(X, y)
        if np.unique(y).size < 2:
            raise ValueError("logistic regression needs at least two classes in the training data")
        if self.standardize:
            self.scaler_ = Scaler().fit(X)
            X = self.scaler_.transform(X)
        else:
            self.scaler_ = None
        Xb = add_bias(X)
        W = np.zeros((self.n_classes_, Xb.shape[1]))
        lr = float(self.learning_rate)
        loss, grad = loss_and_gradient(W, Xb, y, self.l2)
        history = [loss]
        n_iter = 0
        for _ in range(int(self.epochs)):
            n_iter += 1
            W_new = W - lr * grad
            new_loss, new_grad = loss_and_gradient(W_new, Xb, y, self.l2)
            if not new_loss <= loss:
                lr *= 0.5
                continue
            improvement = loss - new_loss
            W, loss, grad = W_new, new_loss, new_grad
            history.append(loss)
            if improvement < self.tolerance:
                break
        self.coef_ = W
        self.loss_history_ = np.array(history)
        self.n_iter_ = n_iter
        self.work_units_ = n_iter * Xb.size * self.n_classes_
        return self

    def decision_function(self, X):
        X = self._validate_predict(X)
        if self.scaler_ is not None:
            X = self.scaler_.transform(X)
        return add_bias(X) @ self.coef_.T

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)
