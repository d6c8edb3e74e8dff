"""Random forest of CART trees grown on Gini impurity.

Trees see bootstrap samples drawn from per-tree generators derived from
``(seed, tree_index)``, so a model depends only on its inputs and seed, never
on the number of worker threads.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _cart
from .errors import InvalidInputError

NTREE_RANGE = (100, 150)
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    ntree: int = 128
    mtry: int | None = None  # None: floor(sqrt(p))
    max_depth: int | None = None
    min_leaf: int = 1
    min_split: int = 2
    seed: int = 0
    allow_any_ntree: bool = False

    def __post_init__(self):
        lo, hi = NTREE_RANGE
        if self.ntree < 1:
            raise InvalidInputError("ntree must be positive")
        if not self.allow_any_ntree and not lo <= self.ntree <= hi:
            raise InvalidInputError(
                f"ntree outside supported range [{lo}, {hi}] (use --allow-any-ntree)")
        if self.min_leaf < 1 or self.min_split < 2:
            raise InvalidInputError("min_leaf must be >= 1 and min_split >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise InvalidInputError("max_depth must be non-negative")
        if self.mtry is not None and self.mtry < 1:
            raise InvalidInputError("mtry must be >= 1")

    def resolve_mtry(self, p: int) -> int:
        m = self.mtry if self.mtry is not None else max(1, math.isqrt(p))
        if not 1 <= m <= p:
            raise InvalidInputError(f"mtry={m} outside [1, {p}]")
        return m


@dataclass(frozen=True)
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 2) class counts per node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] == -1

    def votes(self, X: np.ndarray) -> np.ndarray:
        return _cart.leaf_votes(X, self.feature, self.threshold, self.left, self.right,
                                self.counts)

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "DecisionTree":
        return cls(np.asarray(doc["feature"], np.int64),
                   np.asarray(doc["threshold"], np.float64),
                   np.asarray(doc["left"], np.int64), np.asarray(doc["right"], np.int64),
                   np.asarray(doc["counts"], np.int64).reshape(-1, 2))


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise InvalidInputError("X must be 2-D with one label per row")
    if np.isnan(X).any():
        raise InvalidInputError("X contains missing values; impute first")
    if len(y) and not np.isin(y, (0, 1)).all():
        raise InvalidInputError("labels must be 0 (alone) or 1 (with_others)")
    return X, y


def train_tree(X, y, row_indices, rng: np.random.Generator, params: ForestParams,
               *, mtry: int | None = None) -> DecisionTree:
    X, y = _check_xy(X, y)
    rows = np.ascontiguousarray(row_indices, dtype=np.int64)
    if not len(rows):
        raise InvalidInputError("cannot grow a tree on an empty row set")
    if rows.min() < 0 or rows.max() >= len(y):
        raise InvalidInputError("row index out of range")
    m = mtry if mtry is not None else params.resolve_mtry(X.shape[1])
    seed = int(rng.integers(0, 2**63))
    max_depth = -1 if params.max_depth is None else params.max_depth
    uniq, weights = np.unique(rows, return_counts=True)
    parts = _cart.grow(X, y, uniq, weights.astype(np.int64), m, max_depth, params.min_leaf,
                       params.min_split, np.uint64(seed))
    return DecisionTree(*parts)


def tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), index]))


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    feature_names: list[str]
    params: ForestParams
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def to_json(self) -> dict:
        return {
            "format": "mealsense-forest",
            "version": MODEL_FORMAT_VERSION,
            "params": asdict(self.params),
            "features": list(self.feature_names),
            "meta": self.meta,
            "trees": [t.to_json() for t in self.trees],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, doc: Mapping) -> "ForestModel":
        if doc.get("format") != "mealsense-forest":
            raise InvalidInputError("not a forest model document")
        if doc.get("version") != MODEL_FORMAT_VERSION:
            raise InvalidInputError(f"unsupported model version {doc.get('version')}")
        return cls([DecisionTree.from_json(t) for t in doc["trees"]], list(doc["features"]),
                   ForestParams(**doc["params"]), dict(doc.get("meta", {})))


def train_forest(X, y, params: ForestParams, *, feature_names: Sequence[str] | None = None,
                 row_ids: Sequence | None = None, threads: int = 1,
                 meta: Mapping | None = None) -> ForestModel:
    """Grow ``params.ntree`` trees on bootstrap samples of size n.

    When ``row_ids`` is given, rows are put in sorted row-id order before
    bootstrapping, which makes the model independent of input row order.
    """
    X, y = _check_xy(X, y)
    if len(y) < 2:
        raise InvalidInputError("need at least 2 rows to train a forest")
    if row_ids is not None:
        order = np.argsort(np.asarray(row_ids), kind="stable")
        X, y = X[order], y[order]
    n, p = X.shape
    mtry = params.resolve_mtry(p)
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(p)]
    if len(names) != p:
        raise InvalidInputError("feature_names length does not match X")

    def grow(index):
        rng = tree_rng(params.seed, index)
        rows = rng.integers(0, n, n)
        return train_tree(X, y, rows, rng, params, mtry=mtry)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(grow, range(params.ntree)))
    else:
        trees = [grow(i) for i in range(params.ntree)]
    return ForestModel(trees, names, params, dict(meta or {}))


def vote_counts(model: ForestModel, X) -> np.ndarray:
    """Number of trees voting with_others, per row."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise InvalidInputError(
            f"expected {model.n_features} features, got {X.shape[1]}")
    if np.isnan(X).any():
        raise InvalidInputError("X contains missing values; impute first")
    total = np.zeros(len(X), dtype=np.int64)
    for tree in model.trees:
        total += tree.votes(X)
    return total


def predict_batch(model: ForestModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Labels (ties go to alone) and the vote fraction of the predicted class."""
    others = vote_counts(model, X)
    ntree = len(model.trees)
    labels = (others * 2 > ntree).astype(np.int64)
    frac = np.where(labels == 1, others, ntree - others) / ntree
    return labels, frac


def predict(model: ForestModel, x) -> tuple[int, float]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidInputError("predict takes a single feature vector")
    labels, frac = predict_batch(model, x[None, :])
    return int(labels[0]), float(frac[0])


def _gini(c: np.ndarray) -> np.ndarray:
    n = c.sum(axis=-1).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = 1.0 - ((c ** 2).sum(axis=-1) / n ** 2)
    return np.where(n > 0, g, 0.0)


def tree_importance(tree: DecisionTree, n_features: int) -> np.ndarray:
    """Weighted Gini decrease per feature for one tree (unnormalized)."""
    out = np.zeros(n_features)
    internal = np.flatnonzero(tree.left != -1)
    if not len(internal):
        return out
    c = tree.counts
    n_root = c[0].sum()
    n_node = c[internal].sum(axis=1)
    l, r = tree.left[internal], tree.right[internal]
    dec = (n_node * _gini(c[internal]) - c[l].sum(axis=1) * _gini(c[l])
           - c[r].sum(axis=1) * _gini(c[r])) / n_root
    np.add.at(out, tree.feature[internal], dec)
    return out


def feature_importance(model: ForestModel) -> dict[str, float]:
    """Mean decrease in Gini impurity, summed over trees and normalized to 1."""
    total = np.zeros(model.n_features)
    for tree in model.trees:
        total += tree_importance(tree, model.n_features)
    s = total.sum()
    if s > 0:
        total = total / s
    return dict(zip(model.feature_names, total.tolist()))
