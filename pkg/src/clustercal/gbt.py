"""Gradient-boosted regression trees for binary classification.

Second-order logistic-loss boosting with exact greedy splits, L2 leaf
regularization and midpoint thresholds. The fitted ensemble exposes
margins, probabilities, leaf indices and serialization; SHAP attributions
live in :mod:`clustercal.treeshap`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .scores import ScoreSet, sigmoid, load_external_scores  # noqa: F401  (re-export)

__all__ = ["Tree", "TreeEnsemble", "GBTParams", "fit_gbt", "predict", "leaf_indices"]

GAIN_EPS = 1e-12


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; node 0 is the root, feature == -1 marks leaves."""

    feature: np.ndarray    # (n_nodes,) int
    threshold: np.ndarray  # (n_nodes,) float
    left: np.ndarray       # (n_nodes,) int, -1 for leaves
    right: np.ndarray      # (n_nodes,) int
    value: np.ndarray      # (n_nodes,) float, leaf contribution to the margin
    cover: np.ndarray      # (n_nodes,) float, training samples reaching the node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def rec(j):
            if self.feature[j] < 0:
                return 0
            return 1 + max(rec(self.left[j]), rec(self.right[j]))
        return rec(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node id reached by each row."""
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return node
            xv = X[np.arange(len(X)), np.maximum(f, 0)]
            nxt = np.where(xv <= self.threshold[node], self.left[node], self.right[node])
            node = np.where(internal, nxt, node)

    def expected_value(self) -> float:
        """Cover-weighted mean leaf value."""
        def rec(j):
            if self.feature[j] < 0:
                return self.value[j]
            l, r = self.left[j], self.right[j]
            return (self.cover[l] * rec(l) + self.cover[r] * rec(r)) / self.cover[j]
        return float(rec(0))


@dataclass(frozen=True)
class GBTParams:
    n_trees: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    lambda_l2: float = 1.0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1:
            raise ValueError("n_trees must be >= 0 and max_depth >= 1")
        if self.learning_rate <= 0 or self.min_child_weight < 0 or self.lambda_l2 < 0:
            raise ValueError("learning_rate must be positive, regularizers non-negative")


@dataclass(frozen=True)
class TreeEnsemble:
    trees: tuple[Tree, ...]
    base_score: float
    n_features: int
    params: GBTParams = field(default_factory=GBTParams)
    train_loss: tuple[float, ...] = ()

    def margins(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        out = np.full(len(X), self.base_score)
        for tree in self.trees:
            out += tree.value[tree.apply(X)]
        return out

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} feature columns, got {X.shape}")
        return X

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "n_features": self.n_features,
            "params": vars(self.params),
            "train_loss": list(self.train_loss),
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                    "cover": t.cover.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        trees = tuple(
            Tree(
                np.asarray(t["feature"], dtype=np.int64),
                np.asarray(t["threshold"], dtype=np.float64),
                np.asarray(t["left"], dtype=np.int64),
                np.asarray(t["right"], dtype=np.int64),
                np.asarray(t["value"], dtype=np.float64),
                np.asarray(t["cover"], dtype=np.float64),
            )
            for t in d["trees"]
        )
        return cls(trees, float(d["base_score"]), int(d["n_features"]),
                   GBTParams(**d["params"]), tuple(d.get("train_loss", ())))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "TreeEnsemble":
        return cls.from_dict(json.loads(s))


def _best_split(X, idx, g, h, lam, min_child_weight):
    """Exact greedy split over sorted unique values; midpoint thresholds.

    Ties resolve to the lowest feature index, then the lowest threshold.
    Returns (gain, feature, threshold) or None.
    """
    G, H = g[idx].sum(), h[idx].sum()
    parent = G * G / (H + lam)
    best = None
    for j in range(X.shape[1]):
        xs = X[idx, j]
        order = np.argsort(xs, kind="stable")
        xs_s = xs[order]
        if xs_s[0] == xs_s[-1]:
            continue
        gc = np.cumsum(g[idx][order])[:-1]
        hc = np.cumsum(h[idx][order])[:-1]
        valid = xs_s[:-1] < xs_s[1:]
        valid &= (hc >= min_child_weight) & (H - hc >= min_child_weight)
        if not valid.any():
            continue
        gains = 0.5 * (gc**2 / (hc + lam) + (G - gc) ** 2 / (H - hc + lam) - parent)
        gains[~valid] = -np.inf
        pos = int(np.argmax(gains))  # first max = lowest threshold
        if gains[pos] > GAIN_EPS and (best is None or gains[pos] > best[0]):
            best = (float(gains[pos]), j, float((xs_s[pos] + xs_s[pos + 1]) / 2))
    return best


def _build_tree(X, g, h, params: GBTParams) -> Tree:
    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        cover.append(0.0)
        return len(feature) - 1

    def build(idx, depth):
        j = new_node()
        cover[j] = float(len(idx))
        split = None
        if depth < params.max_depth and len(idx) >= 2:
            split = _best_split(X, idx, g, h, params.lambda_l2, params.min_child_weight)
        if split is None:
            G, H = g[idx].sum(), h[idx].sum()
            value[j] = float(-G / (H + params.lambda_l2) * params.learning_rate)
            return j
        _, f, t = split
        feature[j] = f
        threshold[j] = t
        mask = X[idx, f] <= t
        left[j] = build(idx[mask], depth + 1)
        right[j] = build(idx[~mask], depth + 1)
        return j

    build(np.arange(len(X)), 0)
    return Tree(np.asarray(feature, dtype=np.int64), np.asarray(threshold),
                np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                np.asarray(value), np.asarray(cover))


def fit_gbt(train: Dataset, params: GBTParams | dict | None = None,
            seed: int = 0) -> TreeEnsemble:
    """Train a boosted-tree binary classifier on the training split.

    Training is deterministic; ``seed`` is accepted for interface stability
    (exact greedy boosting draws no random numbers).
    """
    if params is None:
        params = GBTParams()
    elif isinstance(params, dict):
        params = GBTParams(**params)
    X, y = train.features, train.labels.astype(np.float64)
    if (y == y[0]).all():
        raise ValueError("training set has a single class")
    if X.shape[1] == 0:
        raise ValueError("no usable features")
    rate = float(y.mean())
    base = math.log(rate / (1 - rate))
    margin = np.full(len(y), base)
    trees, losses = [], []
    losses.append(_logloss(margin, y))
    for _ in range(params.n_trees):
        p = sigmoid(margin)
        g = p - y
        h = p * (1 - p)
        tree = _build_tree(X, g, h, params)
        trees.append(tree)
        margin += tree.value[tree.apply(X)]
        losses.append(_logloss(margin, y))
    return TreeEnsemble(tuple(trees), base, X.shape[1], params, tuple(losses))


def _logloss(margin, y) -> float:
    # numerically stable mean logistic loss
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def predict(ens: TreeEnsemble, X) -> ScoreSet:
    """Margins and logistic probabilities for each row of X."""
    return ScoreSet.from_margins(ens.margins(np.asarray(X, dtype=np.float64)))


def leaf_indices(ens: TreeEnsemble, X) -> np.ndarray:
    """(N, n_trees) matrix of reached leaf node ids."""
    X = ens._check(np.asarray(X, dtype=np.float64))
    if not ens.trees:
        return np.zeros((len(X), 0), dtype=np.int64)
    return np.column_stack([t.apply(X) for t in ens.trees])
