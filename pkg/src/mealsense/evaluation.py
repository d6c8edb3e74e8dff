"""Participant-disjoint cross-validation of the forest over feature groups."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .episodes import FeatureMatrix, design
from .errors import DegenerateDataError, InvalidInputError
from .forest import ForestParams, feature_importance, predict_batch, train_forest

log = logging.getLogger(__name__)

FEATURE_GROUPS = {
    "A": ("A",),
    "A+T": ("A", "T"),
    "A+T+Cps": ("A", "T", "C_ps"),
    "A+T+Csr": ("A", "T", "C_sr"),
    "A+T+Cps+Csr": ("A", "T", "C_ps", "C_sr"),
}
_TAGS = {"A": ("A_fb", "A_sp"), "T": ("T",), "C_ps": ("C_ps",), "C_sr": ("C_sr",)}
BALANCE_MODES = ("post_split", "pre_split")
BASELINE_ACCURACY = 50.0


def derive_seed(*parts: int) -> int:
    """Deterministic 63-bit seed from a tuple of integers."""
    ss = np.random.SeedSequence([p & (2**64 - 1) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class Fold:
    train: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple[Fold, ...]
    seed: int
    k: int

    def __len__(self):
        return len(self.folds)


def default_k(n_participants: int) -> int:
    return max(1, math.ceil(n_participants / 10))


def group_kfold(participants: Sequence[str], k: int, seed: int) -> SplitPlan:
    """Shuffle participants and cut them into test folds of at most ``k``."""
    people = sorted(set(participants))
    n = len(people)
    if not 1 <= k < n:
        raise InvalidInputError(f"k must satisfy 1 <= k < {n} participants, got {k}")
    order = np.random.default_rng(derive_seed(seed, 0x5EED)).permutation(n)
    shuffled = [people[i] for i in order]
    folds = []
    for start in range(0, n, k):
        test = tuple(sorted(shuffled[start:start + k]))
        held = set(test)
        folds.append(Fold(tuple(p for p in people if p not in held), test))
    return SplitPlan(tuple(folds), seed, k)


# ---------------------------------------------------------------- fold preparation


def upsample(rows, labels, rng: np.random.Generator) -> np.ndarray:
    """Add minority-class rows, drawn with replacement, until classes are equal.

    ``rows`` index into ``labels``; the result is a sorted index multiset that
    contains every input row.
    """
    rows = np.asarray(rows, dtype=np.int64)
    y = np.asarray(labels)[rows]
    n1 = int(np.count_nonzero(y == 1))
    n0 = len(y) - n1
    if n0 == 0 or n1 == 0:
        raise DegenerateDataError("degenerate fold: a class is absent from training rows")
    minority = 0 if n0 < n1 else 1
    extra = abs(n1 - n0)
    if extra == 0:
        return np.sort(rows)
    pool = rows[y == minority]
    drawn = pool[rng.integers(0, len(pool), extra)]
    return np.sort(np.concatenate([rows, drawn]))


def impute(train: np.ndarray, test: np.ndarray, binary: Sequence[bool] | None = None):
    """Fill gaps with training-fold medians (modes for binary columns).

    Columns with no training values are dropped from both splits. Returns
    ``(train, test, kept_column_indices)``.
    """
    train = np.array(train, dtype=float)
    test = np.array(test, dtype=float)
    p = train.shape[1]
    binary = [False] * p if binary is None else list(binary)
    kept = []
    for j in range(p):
        col = train[:, j]
        ok = col[~np.isnan(col)]
        if not len(ok):
            log.warning("column %d has no training values; dropped for this fold", j)
            continue
        if binary[j]:
            fill = 1.0 if np.count_nonzero(ok == 1) > np.count_nonzero(ok == 0) else 0.0
        else:
            fill = float(np.median(ok))
        train[np.isnan(train[:, j]), j] = fill
        test[np.isnan(test[:, j]), j] = fill
        kept.append(j)
    return train[:, kept], test[:, kept], kept


class Metrics(NamedTuple):
    accuracy: float
    precision: float
    recall: float


def metrics(y_true, y_pred) -> Metrics:
    """Accuracy plus macro precision and recall over the two classes."""
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.shape != p.shape:
        raise InvalidInputError("y_true and y_pred differ in length")
    if not len(t):
        raise InvalidInputError("empty label sequence")
    precision, recall = [], []
    for c in (0, 1):
        tp = np.count_nonzero((p == c) & (t == c))
        predicted = np.count_nonzero(p == c)
        actual = np.count_nonzero(t == c)
        precision.append(tp / predicted if predicted else 0.0)
        recall.append(tp / actual if actual else 0.0)
    return Metrics(float(np.mean(t == p)), float(np.mean(precision)), float(np.mean(recall)))


# ---------------------------------------------------------------- experiment


@dataclass(frozen=True)
class FeatureGroupSpec:
    name: str
    columns: tuple[int, ...]
    names: tuple[str, ...]


def resolve_group(name: str, feats) -> FeatureGroupSpec:
    if name not in FEATURE_GROUPS:
        raise InvalidInputError(f"unknown feature group '{name}'")
    tags = {t for part in FEATURE_GROUPS[name] for t in _TAGS[part]}
    cols = tuple(j for j, f in enumerate(feats) if f.group in tags)
    if not cols:
        raise InvalidInputError(f"feature group '{name}' selects no columns")
    return FeatureGroupSpec(name, cols, tuple(feats[j].name for j in cols))


@dataclass
class GroupResult:
    name: str
    pooled: Metrics
    fold_mean: Metrics
    folds: list[dict]
    top_features: list[tuple[str, float]]
    skipped_folds: list[int] = field(default_factory=list)


@dataclass
class ExperimentReport:
    groups: list[GroupResult]
    seed: int
    k: int
    balance: str
    n_rows: int

    def group(self, name: str) -> GroupResult:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature_group", "accuracy", "precision", "recall"])
        w.writerow(["Baseline", f"{BASELINE_ACCURACY:.2f}", "-", "-"])
        for g in self.groups:
            w.writerow([g.name] + [f"{100 * v:.2f}" for v in g.pooled])
        return buf.getvalue()

    def details(self) -> dict:
        return {
            "seed": self.seed,
            "k": self.k,
            "balance": self.balance,
            "n_rows": self.n_rows,
            "baseline_accuracy": BASELINE_ACCURACY,
            "groups": [{
                "name": g.name,
                "pooled": g.pooled._asdict(),
                "fold_mean": g.fold_mean._asdict(),
                "folds": g.folds,
                "top_features": [[n, w] for n, w in g.top_features],
                "skipped_folds": g.skipped_folds,
            } for g in self.groups],
        }

    def details_json(self) -> str:
        return json.dumps(self.details(), indent=2, sort_keys=True) + "\n"


def _fold_rows(participant_ids, fold: Fold):
    test = set(fold.test)
    train = set(fold.train)
    tr = [i for i, p in enumerate(participant_ids) if p in train]
    te = [i for i, p in enumerate(participant_ids) if p in test]
    return np.array(tr, dtype=np.int64), np.array(te, dtype=np.int64)


def run_experiment(matrix: FeatureMatrix, groups: Sequence[str], plan: SplitPlan,
                   params: ForestParams, *, balance: str = "post_split",
                   threads: int = 1) -> ExperimentReport:
    """Train and test one forest per (feature group, fold).

    Per fold: select columns, impute from the training rows, upsample the
    training minority class, train, predict the untouched test rows. Headline
    metrics pool all folds' test predictions.
    """
    if balance not in BALANCE_MODES:
        raise InvalidInputError(f"balance must be one of {', '.join(BALANCE_MODES)}")
    if len(plan) < 2:
        raise InvalidInputError("need at least 2 folds")
    feats, X = design(matrix)
    y = matrix.labels.astype(np.int64)
    pids = list(matrix.participant_ids)
    if balance == "pre_split":
        # replicates the leaky reading: balance the whole dataset, then split
        rows = upsample(np.arange(len(y)), y, np.random.default_rng(derive_seed(plan.seed, 7)))
        X, y = X[rows], y[rows]
        pids = [pids[i] for i in rows]
    binary = [f.kind == "binary" for f in feats]
    fold_rows = [_fold_rows(pids, fold) for fold in plan.folds]

    results = []
    for gname in groups:
        spec = resolve_group(gname, feats)
        cols = list(spec.columns)
        truth, preds, per_fold, skipped = [], [], [], []
        importances: dict[str, float] = {}
        for fi, (tr, te) in enumerate(fold_rows):
            if not len(te) or len(set(y[tr].tolist())) < 2:
                log.warning("group %s fold %d skipped: degenerate fold", gname, fi)
                skipped.append(fi)
                continue
            Xtr, Xte, kept = impute(X[np.ix_(tr, cols)], X[np.ix_(te, cols)],
                                    [binary[j] for j in cols])
            if not kept:
                skipped.append(fi)
                continue
            ytr = y[tr]
            if balance == "post_split":
                idx = upsample(np.arange(len(tr)), ytr,
                               np.random.default_rng(derive_seed(plan.seed, fi, 11)))
            else:
                idx = np.arange(len(tr))
            fold_params = replace(params, seed=derive_seed(params.seed, fi))
            names = [spec.names[j] for j in kept]
            model = train_forest(Xtr[idx], ytr[idx], fold_params, feature_names=names,
                                 threads=threads, meta={"fold": fi, "group": gname})
            pred, _ = predict_batch(model, Xte)
            m = metrics(y[te], pred)
            per_fold.append({"fold": fi, "n_train": int(len(idx)), "n_test": int(len(te)),
                             **m._asdict()})
            truth.append(y[te])
            preds.append(pred)
            for name, w in feature_importance(model).items():
                importances[name] = importances.get(name, 0.0) + w
        if len(skipped) * 2 > len(fold_rows):
            raise DegenerateDataError(
                f"feature group {gname}: {len(skipped)} of {len(fold_rows)} folds skipped")
        n_ok = len(per_fold)
        pooled = metrics(np.concatenate(truth), np.concatenate(preds))
        fold_mean = Metrics(*(float(np.mean([f[k] for f in per_fold]))
                              for k in Metrics._fields))
        ranked = sorted(((n, w / n_ok) for n, w in importances.items()),
                        key=lambda kv: (-kv[1], kv[0]))
        results.append(GroupResult(gname, pooled, fold_mean, per_fold, ranked[:5], skipped))
    return ExperimentReport(results, plan.seed, plan.k, balance, len(y))
