import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mealsense.episodes import Feature, FeatureMatrix
from mealsense.errors import DegenerateDataError, InvalidInputError
from mealsense.evaluation import (FEATURE_GROUPS, default_k, group_kfold, impute, metrics,
                                  resolve_group, run_experiment, upsample)
from mealsense.forest import ForestParams


def _people(n):
    return [f"p{i:02d}" for i in range(n)]


def test_ten_people_pairs():
    plan = group_kfold(_people(10), 2, seed=1)
    assert len(plan) == 5
    assert all(len(f.test) == 2 for f in plan.folds)


def test_remainder_fold():
    plan = group_kfold(_people(7), 3, seed=4)
    assert sorted(len(f.test) for f in plan.folds) == [1, 3, 3]


@given(st.integers(2, 60), st.data(), st.integers(0, 2**63 - 1))
def test_plan_partitions_participants(n, data, seed):
    k = data.draw(st.integers(1, n - 1))
    people = _people(n)
    plan = group_kfold(people, k, seed)
    tests = [p for f in plan.folds for p in f.test]
    assert sorted(tests) == people
    for f in plan.folds:
        assert not set(f.train) & set(f.test)
        assert set(f.train) | set(f.test) == set(people)


def test_k_bounds():
    with pytest.raises(InvalidInputError):
        group_kfold(_people(5), 5, 0)
    with pytest.raises(InvalidInputError):
        group_kfold(_people(5), 0, 0)
    assert default_k(122) == 13


def test_upsample_balances_from_minority():
    labels = np.array([0] * 10 + [1] * 30)
    out = upsample(np.arange(40), labels, np.random.default_rng(0))
    assert np.bincount(labels[out]).tolist() == [30, 30]
    assert len(out) - 40 == 20
    counts = np.bincount(out, minlength=40)
    assert (counts[10:] == 1).all() and counts[:10].sum() == 30


def test_upsample_noop_and_degenerate():
    labels = np.array([0, 1, 0, 1])
    assert upsample([0, 1, 2, 3], labels, np.random.default_rng(0)).tolist() == [0, 1, 2, 3]
    with pytest.raises(DegenerateDataError, match="degenerate fold"):
        upsample([0, 2], labels, np.random.default_rng(0))


@given(st.lists(st.integers(0, 1), min_size=2, max_size=80), st.integers(0, 1000))
def test_upsample_subset_property(labels, seed):
    y = np.array(labels)
    if len(set(labels)) < 2:
        return
    rows = np.arange(len(y))
    out = upsample(rows, y, np.random.default_rng(seed))
    assert set(out.tolist()) == set(rows.tolist())
    c = np.bincount(y[out], minlength=2)
    assert c[0] == c[1] == max(np.bincount(y, minlength=2))


def test_impute_uses_training_statistics():
    train = np.array([[1.0, 0.0, np.nan], [np.nan, 1.0, np.nan], [3.0, 1.0, np.nan]])
    test = np.array([[np.nan, np.nan, 5.0], [100.0, 0.0, np.nan]])
    tr, te, kept = impute(train, test, [False, True, False])
    assert kept == [0, 1]
    assert tr[1, 0] == 2.0
    assert te[0].tolist() == [2.0, 1.0]
    assert te[1].tolist() == [100.0, 0.0]


def test_metrics_examples():
    m = metrics([0, 0, 1, 1], [0, 1, 0, 1])
    assert tuple(m) == (0.5, 0.5, 0.5)
    assert tuple(metrics([0, 1, 1], [0, 1, 1])) == (1.0, 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        metrics([0, 1], [0])


def test_metrics_absent_class_counts_zero():
    m = metrics([1, 1], [1, 1])
    assert (m.precision, m.recall) == (0.5, 0.5)


@given(st.integers(1, 30), st.lists(st.integers(0, 1), min_size=60, max_size=60))
def test_balanced_accuracy_equals_macro_recall(n, preds):
    y_true = np.array([0] * n + [1] * n)
    m = metrics(y_true, np.array(preds[:2 * n]))
    assert math.isclose(m.accuracy, m.recall, abs_tol=1e-12)


def _matrix(n_people=12, per=20, signal=1.5, seed=0):
    rng = np.random.default_rng(seed)
    n = n_people * per
    y = rng.integers(0, 2, n)
    cat = [Feature("steps", "A_fb"), Feature("time", "T"), Feature("location", "C_ps"),
           Feature("concurrent_activity", "C_sr", "categorical", (0, 1, 2))]
    vals = np.column_stack([
        rng.normal(size=n) + signal * y,
        rng.uniform(0, 24, n),
        rng.normal(size=n),
        rng.integers(0, 3, n).astype(float),
    ])
    vals[rng.random(n) < 0.1, 0] = np.nan
    pids = [f"p{i // per:02d}" for i in range(n)]
    return FeatureMatrix(cat, [f"{p}#{i}" for i, p in enumerate(pids)], pids, y, vals)


def test_resolve_group_tags():
    feats = _matrix().catalog
    assert resolve_group("A", feats).names == ("steps",)
    assert resolve_group("A+T+Cps+Csr", feats).names == ("steps", "time", "location",
                                                         "concurrent_activity")
    with pytest.raises(InvalidInputError):
        resolve_group("B", feats)


def test_experiment_report_shape_and_determinism():
    m = _matrix()
    plan = group_kfold(m.participant_ids, 3, seed=0)
    params = ForestParams(ntree=100, seed=7)
    a = run_experiment(m, list(FEATURE_GROUPS), plan, params)
    b = run_experiment(m, list(FEATURE_GROUPS), plan, params, threads=2)
    assert a.to_csv() == b.to_csv() and a.details_json() == b.details_json()
    lines = a.to_csv().splitlines()
    assert lines[0] == "feature_group,accuracy,precision,recall"
    assert lines[1] == "Baseline,50.00,-,-"
    assert len(lines) == 7
    for g in a.groups:
        assert len(g.folds) == len(plan)
        assert 0.0 <= g.pooled.accuracy <= 1.0
        assert len(g.top_features) <= 5
    assert a.group("A").pooled.accuracy > 0.6


def test_pre_split_mode_runs():
    m = _matrix(seed=2)
    plan = group_kfold(m.participant_ids, 4, seed=1)
    r = run_experiment(m, ["A"], plan, ForestParams(ntree=100), balance="pre_split")
    assert r.balance == "pre_split"
    with pytest.raises(InvalidInputError):
        run_experiment(m, ["A"], plan, ForestParams(ntree=100), balance="sometimes")


def test_too_many_degenerate_folds():
    m = _matrix(n_people=4, per=10)
    y = np.array([0 if p in ("p00", "p01", "p02") else 1 for p in m.participant_ids])
    m = m.with_labels(y)
    plan = group_kfold(m.participant_ids, 1, seed=0)
    # the fold holding out p03 trains on a single class
    r = run_experiment(m, ["A"], plan, ForestParams(ntree=100))
    assert len(r.group("A").skipped_folds) == 1
    only = m.with_labels(np.zeros(len(y), dtype=int))
    with pytest.raises(DegenerateDataError):
        run_experiment(only, ["A"], plan, ForestParams(ntree=100))
