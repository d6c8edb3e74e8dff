"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import json
import statistics
import time

import numpy as np
import pytest
import scipy.stats

from helpers import at, cohort, line, report
from mealsense import evaluation
from mealsense.cli import main
from mealsense.episodes import (EARTH_RADIUS_M, ExtractionConfig, Feature, FeatureMatrix,
                                build_matrix, cohort_episodes, radius_of_gyration,
                                screen_features, slotize_stream, wearable_features)
from mealsense.evaluation import FEATURE_GROUPS, group_kfold, run_experiment
from mealsense.forest import ForestParams, train_tree
from mealsense.stats import cohens_d, rank_features, welch_t
from mealsense.synth import CohortSpec, MealSpec, generate_cohort, shuffle_labels
from split_oracle import best_root_split, suite


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return emit


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# 1 ------------------------------------------------------------------ stats oracle

def test_1_statistics_match_reference(verdict):
    rng = np.random.default_rng(1001)
    start = time.perf_counter()
    worst = {"t": 0.0, "df": 0.0, "d": 0.0, "p": 0.0}
    for i in range(1000):
        n1, n2 = rng.integers(2, 501, 2)
        if i % 2:
            a, b = rng.standard_t(2, n1) * 3, rng.standard_t(2, n2) * 3 + rng.normal()
        else:
            a, b = rng.normal(0, 1, n1), rng.normal(rng.normal(0, 0.5), rng.uniform(0.5, 2), n2)
        ours, d = welch_t(a, b), cohens_d(a, b)
        ref = scipy.stats.ttest_ind(a, b, equal_var=False)
        pooled = (((n1 - 1) * statistics.variance(a.tolist())
                   + (n2 - 1) * statistics.variance(b.tolist())) / (n1 + n2 - 2)) ** 0.5
        d_ref = (statistics.fmean(a.tolist()) - statistics.fmean(b.tolist())) / pooled
        worst["t"] = max(worst["t"], _rel(ours.t, ref.statistic))
        worst["df"] = max(worst["df"], _rel(ours.df, ref.df))
        worst["p"] = max(worst["p"], _rel(ours.p, ref.pvalue))
        worst["d"] = max(worst["d"], _rel(d.d, d_ref))
    elapsed = time.perf_counter() - start
    ok = (max(worst["t"], worst["df"], worst["d"]) <= 1e-9 and worst["p"] <= 1e-7
          and elapsed < 10)
    verdict(1, ok, "worst relative error " + ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
            + f"; {elapsed:.1f}s")


# 2 ------------------------------------------------------------------ planted effects

PLANTED = {"min_lightly_bef": 0.5, "mean_steps_bef": 0.2, "min_very_bef": 0.0}


def test_2_planted_effects_recovered(verdict):
    start = time.perf_counter()
    worst, null_flags, sizes = 0.0, 0, []
    for seed in range(20):
        spec = CohortSpec.default("wearable-style", seed=seed, n_days=20,
                                  planted_effects=PLANTED)
        m = build_matrix(generate_cohort(spec).store,
                         ExtractionConfig.for_style("wearable-style"))
        sizes.append(m.n_rows)
        rows = {r.feature: r for r in rank_features(m)}
        worst = max(worst, max(abs(rows[f].cohen_d - d) for f, d in PLANTED.items()))
        null_flags += all(rows[f].ci_includes_zero for f, d in PLANTED.items() if d == 0)
    elapsed = time.perf_counter() - start
    ok = worst <= 0.08 and null_flags >= 18 and min(sizes) >= 4000 and elapsed < 120
    verdict(2, ok, f"max |d - planted| = {worst:.3f} over 20 runs; x flag on d=0 in "
                   f"{null_flags}/20; rows {min(sizes)}-{max(sizes)}; 122 participants; "
                   f"{elapsed:.0f}s")


# 3 ------------------------------------------------------------------ trend replication

CHAIN = ["A", "A+T", "A+T+Cps", "A+T+Cps+Csr"]
TREND_MEALS = (MealSpec("breakfast", "meal", 7.5, 0.75, 0.6, 0.9),
               MealSpec("lunch", "meal", 12.5, 0.6, 0.75, 0.15),
               MealSpec("dinner", "meal", 19.0, 1.0, 0.65, 0.5),
               MealSpec("snack", "snack", 16.0, 2.5, 0.6, 0.55))
TREND_PLANTS = {"min_lightly_bef": 0.9, "mean_steps_bef": 0.7, "min_very_bef": 0.6,
                "min_fairly_bef": 0.6, "location": 1.2}


def test_3_feature_group_trend(verdict):
    acc = []
    for seed in range(10):
        spec = CohortSpec.default("wearable-style", seed=300 + seed, n_participants=40,
                                  n_days=8, meals=TREND_MEALS, planted_effects=TREND_PLANTS,
                                  label_signal_strength=1.0)
        m = build_matrix(generate_cohort(spec).store,
                         ExtractionConfig.for_style("wearable-style"))
        r = run_experiment(m, CHAIN, group_kfold(m.participant_ids, 8, seed),
                           ForestParams(seed=seed))
        acc.append([100 * r.group(g).pooled.accuracy for g in CHAIN])
    acc = np.array(acc)
    mean = acc.mean(axis=0)
    per_seed_order = all((row[1:] >= row[:-1] - 2).all() for row in acc)
    ok = acc[:, 0].min() >= 60 and (mean[1:] >= mean[:-1] - 2).all() and per_seed_order
    verdict(3, ok, "mean accuracy " + " <= ".join(f"{g} {v:.2f}" for g, v in zip(CHAIN, mean))
            + f"; min acc(A) {acc[:, 0].min():.2f}; ordering holds per seed: {per_seed_order}")


# 4 ------------------------------------------------------------------ null control

def test_4_shuffled_labels_sit_at_baseline(verdict):
    groups = list(FEATURE_GROUPS)
    acc = {g: [] for g in groups}
    for seed in range(20):
        spec = CohortSpec.default("wearable-style", seed=400 + seed, n_participants=40,
                                  n_days=8)
        store = shuffle_labels(generate_cohort(spec).store, seed)
        m = build_matrix(store, ExtractionConfig.for_style("wearable-style"))
        r = run_experiment(m, groups, group_kfold(m.participant_ids, 8, seed),
                           ForestParams(seed=seed))
        for g in groups:
            acc[g].append(100 * r.group(g).pooled.accuracy)
    means = {g: float(np.mean(v)) for g, v in acc.items()}
    ok = all(abs(v - 50) <= 3 for v in means.values())
    lo = min(min(v) for v in acc.values())
    hi = max(max(v) for v in acc.values())
    verdict(4, ok, "20-seed mean accuracy " + ", ".join(f"{g} {v:.2f}" for g, v in means.items())
            + f"; single-seed range {lo:.1f}-{hi:.1f}")


# 5 ------------------------------------------------------------------ split integrity

def test_5_split_and_balance_integrity(verdict, monkeypatch):
    calls = []

    class Stub:
        def __init__(self, X, y):
            self.X, self.y = X, y

    def fake_train(X, y, params, **kw):
        calls.append(("train", np.array(X), np.array(y)))
        return Stub(X, y)

    def fake_predict(model, X):
        calls.append(("test", np.array(X), None))
        return np.zeros(len(X), dtype=np.int64), np.ones(len(X))

    monkeypatch.setattr(evaluation, "train_forest", fake_train)
    monkeypatch.setattr(evaluation, "predict_batch", fake_predict)
    monkeypatch.setattr(evaluation, "feature_importance", lambda model: {})

    rng = np.random.default_rng(55)
    failures = []
    for case in range(100):
        n_people = int(rng.integers(3, 40))
        k = int(rng.integers(1, n_people))
        seed = int(rng.integers(0, 2**62))
        sizes = rng.integers(1, 12, n_people)
        pids = [f"p{i:02d}" for i, s in enumerate(sizes) for _ in range(s)]
        n = len(pids)
        ids = np.arange(n, dtype=float)
        noise = rng.normal(size=n)
        noise[rng.random(n) < 0.2] = np.nan
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        m = FeatureMatrix([Feature("row", "A_fb"), Feature("noise", "A_fb")],
                          [str(i) for i in range(n)], pids, y, np.column_stack([ids, noise]))
        plan = group_kfold(pids, k, seed)
        calls.clear()
        try:
            run_experiment(m, ["A"], plan, ForestParams(seed=seed))
        except evaluation.DegenerateDataError:
            pass  # too many single-class folds; the folds that ran were still recorded
        trains = [c for c in calls if c[0] == "train"]
        tests = [c for c in calls if c[0] == "test"]
        folds = iter(plan.folds)
        for (_, Xtr, ytr), (_, Xte, _) in zip(trains, tests):
            fold = next(f for f in folds if set(f.test) == {pids[int(i)] for i in Xte[:, 0]})
            if set(fold.train) & set(fold.test):
                failures.append((case, "overlap"))
            if {pids[int(i)] for i in Xtr[:, 0]} & set(fold.test):
                failures.append((case, "leak"))
            c = np.bincount(ytr, minlength=2)
            if c[0] != c[1]:
                failures.append((case, "unbalanced"))
            expect = [i for i in range(n) if pids[i] in set(fold.test)]
            original = m.values[expect]
            kept = ~np.isnan(original)
            if Xte[:, 0].tolist() != expect or not np.array_equal(Xte[kept], original[kept]):
                failures.append((case, "test modified"))
        tested = sorted(p for f in plan.folds for p in f.test)
        if tested != sorted(set(pids)):
            failures.append((case, "not a partition"))
    verdict(5, not failures, f"100 plans checked; failures: {failures[:5] or 'none'}")


# 6 ------------------------------------------------------------------ tree vs oracle

def test_6_root_split_matches_exhaustive_search(verdict):
    cases = suite(300)
    mismatches = 0
    for X, y in cases:
        Xa = np.asarray(X, dtype=float)
        t = train_tree(Xa, np.asarray(y), np.arange(len(y)), np.random.default_rng(0),
                       ForestParams(), mtry=Xa.shape[1])
        expected = best_root_split(X, y)
        got = None if t.is_leaf(0) else (int(t.feature[0]), float(t.threshold[0]))
        if got != (None if expected is None else (expected[0], float(expected[1]))):
            mismatches += 1
    verdict(6, mismatches == 0, f"{len(cases)} datasets, {mismatches} root-split mismatches")


# 7 ------------------------------------------------------------------ determinism

def test_7_byte_identical_outputs(verdict, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"style": "phone-style", "n_participants": 16, "n_days": 5}))
    digests = []
    for run, threads in (("r1", "1"), ("r2", "3")):
        d = tmp_path / run
        assert main(["synth", str(spec), "--seed", "77", "--out", str(d / "data")]) == 0
        assert main(["extract", str(d / "data"), "--out", str(d / "ext")]) == 0
        assert main(["evaluate", str(d / "ext" / "features.csv"), "--seed", "77", "--k", "4",
                     "--threads", threads, "--out", str(d / "eval")]) == 0
        files = sorted(p for p in d.rglob("*") if p.is_file() and p.name != "run_config.json")
        digests.append({str(p.relative_to(d)): p.read_bytes() for p in files})
    same = digests[0] == digests[1]
    verdict(7, same, f"{len(digests[0])} files compared across runs with --threads 1 and 3")


# 8 ------------------------------------------------------------------ micro-oracles

def test_8_feature_micro_oracles(verdict):
    wear = ([line("u1", at("11:30", sec=60 * i), steps=10, level="fairly") for i in range(10)]
            + [line("u1", at("11:40", sec=60 * i), steps=5, level="lightly") for i in range(10)]
            + [line("u1", at("11:50", sec=60 * i), steps=0, level="sedentary")
               for i in range(10)])
    c = cohort({"report": [report("u1", at("12:00"))], "wearable": wear})
    cfg = ExtractionConfig(alpha=30)
    f = wearable_features(slotize_stream(c.stream("u1", "wearable"), cfg),
                          cohort_episodes(c, "u1")[0], cfg)
    steps = tuple(f[f"{s}_bef"] for s in ("tot_steps", "mean_steps", "median_steps",
                                          "sd_steps"))
    screen = [line("u1", at(t), state=s) for t, s in
              (("10:05", "on"), ("10:20", "off"), ("10:40", "on"), ("10:50", "off"))]
    c = cohort({"report": [report("u1", at("10:30"))], "screen": screen})
    sf = screen_features(c.stream("u1", "screen"), cohort_episodes(c, "u1")[0], cfg)
    dlon = np.degrees(200.0 / EARTH_RADIUS_M)
    rg = radius_of_gyration([(0.0, 30.0), (0.0, 30.0 + dlon)])
    ok = (steps == (150, 50, 50, 50)
          and (sf["screen_on_sec"], sf["screen_on_count"]) == (1500, 2)
          and abs(rg - 100.0) <= 1e-6)
    verdict(8, ok, f"steps tot/mean/median/sd={steps}; screen {sf['screen_on_sec']:.0f}s/"
                   f"{sf['screen_on_count']:.0f}; r_g={rg:.9f} m")
