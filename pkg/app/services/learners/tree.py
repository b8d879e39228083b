"""
Binary regression trees.

The node layout and the growing loop are shared by CART, the ensembles and the
conditional-inference forest; only the rule choosing a split differs.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Optional, Sequence

import numpy as np

from app.core.rng import stream
from app.models.dataset import FeatureMatrix
from app.models.enums import LearnerKind, TaskKind
from app.services.learners.base import Features, Model, as_features, check_finite

# (rows, depth) -> split or None
SplitRule = Callable[[np.ndarray, int], Optional["Split"]]


def _tol(value: float) -> float:
    return 1e-12 * max(1.0, abs(value))


@dataclass
class Split:
    feature: int
    gain: float
    threshold: float = np.nan
    left_levels: Optional[tuple[int, ...]] = None

    def goes_left(self, column: np.ndarray) -> np.ndarray:
        if self.left_levels is not None:
            return np.isin(column, self.left_levels)
        return column <= self.threshold

    def to_dict(self) -> dict[str, Any]:
        if self.left_levels is not None:
            return {"feature": self.feature, "left_levels": list(self.left_levels)}
        return {"feature": self.feature, "threshold": self.threshold}


@dataclass
class Node:
    value: float
    n: int
    split: Optional[Split] = None
    left: int = -1
    right: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.split is None


class Tree:
    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @cached_property
    def _values(self) -> np.ndarray:
        return np.array([node.value for node in self.nodes])

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf id of every row"""
        leaf = np.zeros(X.shape[0], dtype=np.int64)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node_id, rows = stack.pop()
            node = self.nodes[node_id]
            if node.is_leaf or rows.size == 0:
                leaf[rows] = node_id
                continue
            left = node.split.goes_left(X[rows, node.split.feature])
            stack.append((node.left, rows[left]))
            stack.append((node.right, rows[~left]))
        return leaf

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self._values[self.apply(X)]

    def used_features(self) -> set[int]:
        return {node.split.feature for node in self.nodes if not node.is_leaf}

    @property
    def n_leaves(self) -> int:
        return sum(node.is_leaf for node in self.nodes)

    @property
    def depth(self) -> int:
        depth, stack = 0, [(0, 0)]
        while stack:
            node_id, d = stack.pop()
            depth = max(depth, d)
            node = self.nodes[node_id]
            if not node.is_leaf:
                stack.extend([(node.left, d + 1), (node.right, d + 1)])
        return depth

    def to_dict(self) -> list[dict[str, Any]]:
        out = []
        for node in self.nodes:
            entry: dict[str, Any] = {"value": node.value, "n": node.n}
            if not node.is_leaf:
                entry.update(node.split.to_dict(), left=node.left, right=node.right)
            out.append(entry)
        return out


def grow(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    choose_split: SplitRule,
    max_depth: Optional[int],
    min_leaf: int,
) -> Tree:
    """Grow depth-first; nodes smaller than 2 * min_leaf are never split"""
    nodes: list[Node] = []

    def build(rows: np.ndarray, depth: int) -> int:
        node_id = len(nodes)
        nodes.append(Node(value=float(y[rows].mean()) if rows.size else 0.0, n=int(rows.size)))
        if (max_depth is not None and depth >= max_depth) or rows.size < 2 * min_leaf:
            return node_id
        split = choose_split(rows, depth)
        if split is None:
            return node_id
        left = split.goes_left(X[rows, split.feature])
        node = nodes[node_id]
        node.split = split
        node.left = build(rows[left], depth + 1)
        node.right = build(rows[~left], depth + 1)
        return node_id

    build(np.asarray(rows, dtype=np.int64), 0)
    return Tree(nodes)


def _split_gains(sums: np.ndarray, counts: np.ndarray, total: float, n: float) -> np.ndarray:
    """Reduction in squared error for left sums/counts at each cut"""
    right_counts = n - counts
    with np.errstate(divide="ignore", invalid="ignore"):
        return sums ** 2 / counts + (total - sums) ** 2 / right_counts - total ** 2 / n


def continuous_split(x: np.ndarray, y: np.ndarray, feature: int, min_leaf: int) -> Optional[Split]:
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = xs.size
    if n < 2:
        return None
    counts = np.arange(1, n, dtype=float)
    valid = (xs[:-1] < xs[1:]) & (counts >= min_leaf) & (n - counts >= min_leaf)
    if not valid.any():
        return None
    gains = np.where(valid, _split_gains(np.cumsum(ys)[:-1], counts, float(ys.sum()), float(n)), -np.inf)
    top = gains.max()
    i = int(np.flatnonzero(gains >= top - _tol(top))[0])
    threshold = xs[i] + (xs[i + 1] - xs[i]) / 2.0
    if threshold >= xs[i + 1]:
        threshold = xs[i]
    return Split(feature=feature, gain=float(gains[i]), threshold=float(threshold))


def categorical_split(
    codes: np.ndarray, y: np.ndarray, feature: int, n_levels: int, min_leaf: int
) -> Optional[Split]:
    """Best cut of the levels ordered by their mean response"""
    codes = codes.astype(np.int64)
    counts = np.bincount(codes, minlength=n_levels).astype(float)
    sums = np.bincount(codes, weights=y, minlength=n_levels)
    present = np.flatnonzero(counts)
    if present.size < 2:
        return None
    order = present[np.argsort(sums[present] / counts[present], kind="stable")]
    left_counts = np.cumsum(counts[order])[:-1]
    n = counts.sum()
    valid = (left_counts >= min_leaf) & (n - left_counts >= min_leaf)
    if not valid.any():
        return None
    gains = np.where(valid, _split_gains(np.cumsum(sums[order])[:-1], left_counts, float(sums.sum()), n), -np.inf)
    top = gains.max()
    k = int(np.flatnonzero(gains >= top - _tol(top))[0])
    return Split(feature=feature, gain=float(gains[k]), left_levels=tuple(sorted(order[: k + 1].tolist())))


def feature_split(X: FeatureMatrix, y: np.ndarray, rows: np.ndarray, j: int, min_leaf: int) -> Optional[Split]:
    """Best split on column j for the node rows; y should be centered on the node"""
    if X.is_categorical[j]:
        return categorical_split(X.values[rows, j], y, j, int(X.n_levels[j]), min_leaf)
    return continuous_split(X.values[rows, j], y, j, min_leaf)


def best_split(
    X: FeatureMatrix, y: np.ndarray, rows: np.ndarray, features: Sequence[int], min_leaf: int
) -> Optional[Split]:
    """Largest squared-error reduction; ties go to the lowest column, then the lowest cut"""
    yr = y[rows] - y[rows].mean()
    sst = float(yr @ yr)
    best: Optional[Split] = None
    for j in sorted(features):
        candidate = feature_split(X, yr, rows, j, min_leaf)
        if candidate is None:
            continue
        if best is None or candidate.gain > best.gain + _tol(best.gain):
            best = candidate
    if best is None or best.gain <= _tol(sst):
        return None
    return best


def variance_rule(
    X: FeatureMatrix, y: np.ndarray, min_leaf: int, mtry: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> SplitRule:
    p = X.n_features

    def choose(rows: np.ndarray, depth: int) -> Optional[Split]:
        if mtry is None or mtry >= p:
            features: Sequence[int] = range(p)
        else:
            features = rng.choice(p, size=mtry, replace=False)
        return best_split(X, y, rows, features, min_leaf)

    return choose


class TreeModel(Model):
    kind = LearnerKind.TREE

    def __init__(self, tree: Tree, task: TaskKind = TaskKind.REGRESSION, max_depth: Optional[int] = None,
                 min_leaf: int = 1):
        super().__init__(task)
        self.tree = tree
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def _predict(self, X: FeatureMatrix) -> np.ndarray:
        return self.tree.predict(X.values)

    def params(self) -> dict[str, Any]:
        return {"max_depth": self.max_depth, "min_leaf": self.min_leaf, "nodes": self.tree.to_dict()}


def fit_cart(
    features: Features,
    y: np.ndarray,
    max_depth: Optional[int] = 6,
    min_leaf: int = 10,
    seed: int = 0,
    task: TaskKind = TaskKind.REGRESSION,
    mtry: Optional[int] = None,
) -> TreeModel:
    """Greedy variance-reduction tree; seed only matters with feature subsampling"""
    X = as_features(features)
    y = np.asarray(y, dtype=float)
    check_finite(X.values, y)
    rng = stream(seed, "cart")
    rule = variance_rule(X, y, min_leaf, mtry, rng)
    tree = grow(X.values, y, np.arange(X.n_rows), rule, max_depth, min_leaf)
    return TreeModel(tree, task, max_depth, min_leaf)
