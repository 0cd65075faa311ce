"""CART classification tree with Gini impurity and midpoint thresholds."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Union

import numpy as np

from ._base import NodeClassifier

LEAF = -1
_CHUNK_CELLS = 4_000_000


def gini_impurity(class_counts) -> float:
    counts = np.asarray(class_counts, dtype=np.int64)
    if counts.ndim != 1 or (counts < 0).any():
        raise ValueError("class counts must be a vector of non-negative integers")
    n = int(counts.sum())
    if n == 0:
        raise ValueError("gini impurity is undefined for an empty node")
    return 1.0 - float((counts * counts).sum()) / (n * n)


class Split(NamedTuple):
    feature_index: int
    threshold: float
    impurity_decrease: float


def _midpoint(a: float, b: float) -> float:
    mid = a + (b - a) / 2.0
    # rounding can land on b, which would send b to the left branch
    return a if mid >= b else mid


def find_best_split(features, labels, candidate_columns=None, n_classes=None) -> Split | None:
    """Best axis-aligned split by weighted Gini decrease, or None if nothing helps.

    Rows with ``x <= threshold`` go left. Candidate thresholds are midpoints
    between consecutive distinct values. The arg-max is resolved exactly in
    rational arithmetic, so ties go to the lowest feature index and then the
    lowest threshold regardless of floating-point noise.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    if n < 2:
        return None
    cols = np.arange(X.shape[1]) if candidate_columns is None else np.asarray(candidate_columns, dtype=np.int64)
    if cols.size == 0:
        return None
    C = int(n_classes) if n_classes is not None else int(y.max()) + 1
    total = np.bincount(y, minlength=C).astype(np.int64)
    if (total > 0).sum() < 2:
        return None

    n_left = np.arange(1, n, dtype=np.int64)[:, None]
    n_right = n - n_left
    chunk = max(1, _CHUNK_CELLS // (n * C))
    candidates = []  # (score, position, column, value-at-position, value-after)
    best = -np.inf
    for start in range(0, cols.size, chunk):
        sub = cols[start:start + chunk]
        Xs = X[:, sub]
        order = np.argsort(Xs, axis=0, kind="stable")
        vals = np.take_along_axis(Xs, order, axis=0)
        onehot = np.zeros((n, sub.size, C), dtype=np.int32)
        np.put_along_axis(onehot, y[order][:, :, None], 1, axis=2)
        left = np.cumsum(onehot[:-1], axis=0, dtype=np.int64)  # rows 0..i go left
        del onehot
        sq_left = np.einsum("ijk,ijk->ij", left, left)
        right = total[None, None, :] - left
        sq_right = np.einsum("ijk,ijk->ij", right, right)
        valid = vals[:-1] < vals[1:]
        if not valid.any():
            continue
        # maximizing sq_left/n_left + sq_right/n_right minimizes weighted child impurity
        score = np.where(valid, sq_left / n_left + sq_right / n_right, -np.inf)
        chunk_best = score.max()
        best = max(best, chunk_best)
        for pos, j in np.argwhere(score >= chunk_best - abs(chunk_best) * 1e-9):
            candidates.append((score[pos, j], int(pos), int(sub[j]), int(sq_left[pos, j]), int(sq_right[pos, j]),
                               float(vals[pos, j]), float(vals[pos + 1, j])))
    if not candidates:
        return None

    best_key = None
    for sc, pos, col, sql, sqr, lo, hi in candidates:
        if sc < best - abs(best) * 1e-9:
            continue
        nl, nr = pos + 1, n - pos - 1
        value = Fraction(sql * nr + sqr * nl, nl * nr)
        key = (-value, col, lo)
        if best_key is None or key < best_key:
            best_key, best_at = key, (col, lo, hi)
    value = -best_key[0]
    total_sq = int((total * total).sum())
    decrease = value / n - Fraction(total_sq, n * n)
    if decrease <= 0:
        return None
    col, lo, hi = best_at
    return Split(col, _midpoint(lo, hi), float(decrease))


@dataclass(frozen=True)
class Leaf:
    class_counts: tuple[int, ...]

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.class_counts))


@dataclass(frozen=True)
class Internal:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Internal]


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    impurity: str = "gini"

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be at least 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative or None")
        if self.impurity != "gini":
            raise ValueError("only Gini impurity is supported")


class DecisionTreeClassifier(NodeClassifier):
    """Recursive CART grown until purity, the depth cap or ``min_samples_split``.

    The fitted tree is stored as flat preorder arrays: ``feature_`` (-1 marks
    a leaf), ``threshold_``, ``children_left_``, ``children_right_`` and
    ``value_`` (class counts per node).
    """

    _kind = "tree"

    def __init__(self, max_depth=None, min_samples_split=2, standardize=False, n_classes=None):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.standardize = standardize
        self.n_classes = n_classes

    def fit(self, X, y):
        TreeParams(self.max_depth, self.min_samples_split)
        X, y = self._validate_fit(X, y)
        if self.standardize:
            from ..preprocess import Scaler

            self.scaler_ = Scaler().fit(X)
            X = self.scaler_.transform(X)
        else:
            self.scaler_ = None
        C = self.n_classes_
        feature, threshold, left, right, value = [], [], [], [], []
        work = 0
        # preorder growth: pop the left child before the right one
        stack = [(np.arange(X.shape[0]), 0, -1, False)]
        while stack:
            idx, depth, parent, is_left = stack.pop()
            node = len(feature)
            if parent >= 0:
                (left if is_left else right)[parent] = node
            counts = np.bincount(y[idx], minlength=C)
            feature.append(LEAF)
            threshold.append(0.0)
            left.append(LEAF)
            right.append(LEAF)
            value.append(counts)
            if (
                (self.max_depth is not None and depth >= self.max_depth)
                or idx.size < self.min_samples_split
                or np.count_nonzero(counts) < 2
            ):
                continue
            work += idx.size * X.shape[1]
            split = find_best_split(X[idx], y[idx], n_classes=C)
            if split is None:
                continue
            feature[node] = split.feature_index
            threshold[node] = split.threshold
            go_left = X[idx, split.feature_index] <= split.threshold
            stack.append((idx[~go_left], depth + 1, node, False))
            stack.append((idx[go_left], depth + 1, node, True))

        self.feature_ = np.array(feature, dtype=np.int64)
        self.threshold_ = np.array(threshold, dtype=np.float64)
        self.children_left_ = np.array(left, dtype=np.int64)
        self.children_right_ = np.array(right, dtype=np.int64)
        self.value_ = np.array(value, dtype=np.int64).reshape(len(feature), C)
        self.work_units_ = max(work, X.shape[0])
        self._finalize()
        return self

    def _finalize(self):
        self.leaf_class_ = np.argmax(self.value_, axis=1)  # ties -> lowest class id

    @property
    def node_count(self) -> int:
        return int(self.feature_.shape[0])

    def get_depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=np.int64)
        for i in range(self.node_count):
            if self.feature_[i] != LEAF:
                depth[self.children_left_[i]] = depth[i] + 1
                depth[self.children_right_[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Index of the leaf each row lands in."""
        X = self._validate_predict(X)
        if self.scaler_ is not None:
            X = self.scaler_.transform(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature_[node] != LEAF)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature_[cur]] <= self.threshold_[cur]
            node[active] = np.where(go_left, self.children_left_[cur], self.children_right_[cur])
            active = active[self.feature_[node[active]] != LEAF]
        return node

    def predict(self, X):
        return self.leaf_class_[self.apply(X)]

    def predict_proba(self, X):
        counts = self.value_[self.apply(X)].astype(np.float64)
        return counts / counts.sum(axis=1, keepdims=True)

    @property
    def root_(self) -> TreeNode:
        """The fitted tree as nested Leaf / Internal nodes."""
        built: dict[int, TreeNode] = {}
        for i in reversed(range(self.node_count)):  # children always follow parents in preorder
            if self.feature_[i] == LEAF:
                built[i] = Leaf(tuple(int(c) for c in self.value_[i]))
            else:
                built[i] = Internal(
                    int(self.feature_[i]),
                    float(self.threshold_[i]),
                    built.pop(int(self.children_left_[i])),
                    built.pop(int(self.children_right_[i])),
                )
        return built[0]
