"""Descriptive and inferential statistics over a feature matrix.

Sign convention: every effect compares eating-alone minus eating-with-others.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .episodes import LABELS, FeatureMatrix, design, format_value
from .errors import DegenerateDataError, InvalidInputError

log = logging.getLogger(__name__)

Z95 = 1.96
CF_TOL = 1e-12
CF_MAX_ITER = 300
_TINY = 1e-300

STAR_CONVENTION = "p<0.0001=*, p<0.001=**, p<0.01=***"


# ---------------------------------------------------------------- Student t


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < CF_TOL:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge "
                          f"(a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float, xc: float | None = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``xc`` may carry ``1 - x`` computed without cancellation.
    """
    if xc is None:
        xc = 1.0 - x
    if x <= 0.0:
        return 0.0
    if xc <= 0.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(xc))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, xc) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise InvalidInputError("degrees of freedom must be positive")
    if t == 0.0:
        return 1.0
    if math.isinf(t):
        return 0.0
    t2 = t * t
    p = betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))
    return min(1.0, p)


def t_cdf(t: float, df: float) -> float:
    half = 0.5 * t_two_sided_p(t, df)
    return half if t < 0 else 1.0 - half


# ---------------------------------------------------------------- tests


class WelchResult(NamedTuple):
    t: float
    df: float
    p: float


class CohenD(NamedTuple):
    d: float
    ci_lo: float
    ci_hi: float


def _samples(a, name) -> np.ndarray:
    arr = np.asarray(a, dtype=float).ravel()
    if len(arr) < 2:
        raise InvalidInputError(f"group {name} needs at least 2 samples")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"group {name} contains non-finite values")
    return arr


def welch_t(a, b) -> WelchResult:
    """Unequal-variance t test with Welch-Satterthwaite degrees of freedom."""
    a, b = _samples(a, "a"), _samples(b, "b")
    n1, n2 = len(a), len(b)
    m1, m2 = a.mean(), b.mean()
    v1, v2 = a.var(ddof=1) / n1, b.var(ddof=1) / n2
    se2 = v1 + v2
    if se2 == 0.0:
        if m1 == m2:
            return WelchResult(0.0, float(n1 + n2 - 2), 1.0)
        raise DegenerateDataError("degenerate variance")
    t = float((m1 - m2) / math.sqrt(se2))
    df = float(se2 ** 2 / (v1 ** 2 / (n1 - 1) + v2 ** 2 / (n2 - 1)))
    p = t_two_sided_p(t, df)
    return WelchResult(t, df, max(p, 5e-324))


def cohens_d(a, b) -> CohenD:
    """Pooled-SD standardized mean difference with a normal-approximation 95% CI."""
    a, b = _samples(a, "a"), _samples(b, "b")
    n1, n2 = len(a), len(b)
    pooled = ((n1 - 1) * a.var(ddof=1) + (n2 - 1) * b.var(ddof=1)) / (n1 + n2 - 2)
    diff = a.mean() - b.mean()
    if pooled == 0.0:
        if diff != 0.0:
            raise DegenerateDataError("degenerate variance")
        d = 0.0
    else:
        d = float(diff / math.sqrt(pooled))
    se = math.sqrt((n1 + n2) / (n1 * n2) + d * d / (2 * (n1 + n2)))
    return CohenD(d, d - Z95 * se, d + Z95 * se)


def stars(p: float) -> str:
    # inverted on purpose: fewer stars mean a smaller p
    if p < 0.0001:
        return "*"
    if p < 0.001:
        return "**"
    if p < 0.01:
        return "***"
    return ""


def effect_class(d: float) -> str:
    m = abs(d)
    if m >= 0.8:
        return "large"
    if m >= 0.5:
        return "medium"
    if m >= 0.2:
        return "small"
    return "negligible"


@dataclass(frozen=True)
class EffectSizeRow:
    feature: str
    group: str
    cohen_d: float
    ci_lo: float
    ci_hi: float
    t_stat: float
    p_value: float
    n_alone: int
    n_others: int

    @property
    def stars(self) -> str:
        return stars(self.p_value)

    @property
    def ci_includes_zero(self) -> bool:
        return self.ci_lo <= 0.0 <= self.ci_hi

    @property
    def effect_class(self) -> str:
        return effect_class(self.cohen_d)


def rank_features(matrix: FeatureMatrix) -> list[EffectSizeRow]:
    """Per-feature Welch t, p and Cohen's d, sorted by |d| descending.

    Categorical features are one-hot expanded. Missing values are dropped per
    feature. Features that cannot be tested (fewer than two values in a class,
    or constant classes with different means) are skipped with a warning.
    """
    labels = matrix.labels
    for k, name in enumerate(LABELS):
        if np.count_nonzero(labels == k) < 2:
            raise DegenerateDataError(f"class '{name}' has fewer than 2 rows")
    feats, X = design(matrix)
    rows = []
    for j, f in enumerate(feats):
        col = X[:, j]
        ok = ~np.isnan(col)
        a, b = col[ok & (labels == 0)], col[ok & (labels == 1)]
        if len(a) < 2 or len(b) < 2:
            log.warning("skipping %s: fewer than 2 values in a class", f.name)
            continue
        try:
            w = welch_t(a, b)
            d = cohens_d(a, b)
        except DegenerateDataError:
            log.warning("skipping %s: degenerate variance", f.name)
            continue
        rows.append(EffectSizeRow(f.name, f.group, d.d, d.ci_lo, d.ci_hi, w.t, w.p,
                                  len(a), len(b)))
    rows.sort(key=lambda r: -abs(r.cohen_d))
    return rows


def effect_sizes_csv(rows: Sequence[EffectSizeRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# stars: {STAR_CONVENTION}\n")
    buf.write("# ci_includes_zero marks a 95% CI for cohens_d that contains 0\n")
    buf.write("# cohens_d = (mean alone - mean with_others) / pooled sd\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "group", "cohens_d", "ci_lo", "ci_hi", "t_stat", "p_value",
                "stars", "ci_includes_zero", "effect_class"])
    for r in rows:
        w.writerow([r.feature, r.group, format_value(r.cohen_d), format_value(r.ci_lo),
                    format_value(r.ci_hi), format_value(r.t_stat), format_value(r.p_value),
                    r.stars, "x" if r.ci_includes_zero else "", r.effect_class])
    return buf.getvalue()


# ---------------------------------------------------------------- descriptive


@dataclass(frozen=True)
class TemporalHistogram:
    bin_minutes: int
    counts: np.ndarray  # shape (n_bins, 2): columns alone, with_others

    def to_csv(self) -> str:
        lines = ["bin_start,alone,with_others"]
        for k, (a, o) in enumerate(self.counts.tolist()):
            m = k * self.bin_minutes
            lines.append(f"{m // 60:02d}:{m % 60:02d},{a},{o}")
        return "\n".join(lines) + "\n"


def temporal_histogram(episodes: Iterable, bin_minutes: int = 60) -> TemporalHistogram:
    """Per-class counts of episodes by local time-of-day bin (left-closed bins).

    ``episodes`` yields objects with ``time`` (local seconds) and ``label``, or
    ``(minute_of_day, label)`` pairs.
    """
    if bin_minutes <= 0 or 1440 % bin_minutes:
        raise InvalidInputError("bin_minutes must divide 1440")
    counts = np.zeros((1440 // bin_minutes, 2), dtype=np.int64)
    for ep in episodes:
        if isinstance(ep, tuple):
            minute, label = ep
        else:
            minute, label = (ep.time % 86400) // 60, ep.label
        k = LABELS.index(label) if isinstance(label, str) else int(label)
        counts[int(minute) % 1440 // bin_minutes, k] += 1
    return TemporalHistogram(bin_minutes, counts)


def histogram_from_matrix(matrix: FeatureMatrix, bin_minutes: int = 60) -> TemporalHistogram:
    """Histogram from the ``time`` column, resolved to the nearest minute."""
    hours = matrix.column("time")
    pairs = [(int(round(h * 60)), lab) for h, lab in zip(hours.tolist(), matrix.labels.tolist())
             if not math.isnan(h)]
    return temporal_histogram(pairs, bin_minutes)


@dataclass(frozen=True)
class DistributionSummary:
    feature: str
    label: str
    n: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    sd: float
    samples: tuple[float, ...] = field(repr=False, default=())


def summarize(values, feature: str = "", label: str = "") -> DistributionSummary:
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if not len(v):
        nan = math.nan
        return DistributionSummary(feature, label, 0, nan, nan, nan, nan, nan, nan, nan)
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])  # linear interpolation
    sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
    return DistributionSummary(feature, label, len(v), float(v.min()), float(q1), float(med),
                               float(q3), float(v.max()), float(v.mean()), sd,
                               tuple(v.tolist()))


def distribution_summary(matrix: FeatureMatrix,
                         feature_names: Sequence[str]) -> list[DistributionSummary]:
    known = matrix.feature_names
    out = []
    for name in feature_names:
        if name not in known:
            raise InvalidInputError(f"unknown feature '{name}'")
        col = matrix.column(name)
        for k, label in enumerate(LABELS):
            out.append(summarize(col[matrix.labels == k], name, label))
    return out


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def distributions_csv(summaries: Sequence[DistributionSummary]) -> str:
    return _csv(["feature", "label", "n", "min", "q1", "median", "q3", "max", "mean", "sd"],
                ([s.feature, s.label, s.n] + [format_value(x) for x in
                 (s.min, s.q1, s.median, s.q3, s.max, s.mean, s.sd)] for s in summaries))


def samples_csv(summaries: Sequence[DistributionSummary]) -> str:
    return _csv(["feature", "label", "value"],
                ([s.feature, s.label, format_value(x)] for s in summaries for x in s.samples))
