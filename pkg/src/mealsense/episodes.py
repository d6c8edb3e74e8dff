"""Per-episode feature extraction.

Raw streams are first aggregated into wall-clock aligned slots (10 minutes by
default). Each eating report at time T then gets a feature row built from a
before window ``[T - alpha, T)`` and an after window ``(T, T + alpha]``.

Slot-based modalities (wearable, accel) snap both windows outward to slot
boundaries; a slot goes to the before side iff its start is earlier than T.
Event modalities (screen, battery, apps, location) use the exact bounds.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateDataError, InvalidInputError
from .ingest import (ACTIVITY_LEVELS, MEAL_KINDS, SOCIAL_LABELS, CohortStore, Stream,
                     from_seconds)

GROUPS = ("T", "A_fb", "A_sp", "C_ps", "C_sr")
LABELS = SOCIAL_LABELS  # index 0 = alone, 1 = with_others
EARTH_RADIUS_M = 6_371_000.0
SIDES = ("bef", "aft")

DEFAULT_ALPHA = {"wearable-style": 120, "phone-style": 30, "custom": 120}


@dataclass(frozen=True)
class ExtractionConfig:
    alpha: int = 120
    slot_len: int = 10
    top_n_apps: int = 10
    min_slot_coverage: float = 0.5
    tsl_cap_hours: float = 24.0
    max_missing_fraction: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0 or self.slot_len <= 0:
            raise InvalidInputError("alpha and slot_len must be positive")
        if self.alpha % self.slot_len:
            raise InvalidInputError("alpha must be divisible by slot_len")
        if 1440 % self.slot_len:
            raise InvalidInputError("slot_len must divide a day")
        if self.top_n_apps < 1:
            raise InvalidInputError("top_n_apps must be >= 1")
        if not 0.0 <= self.min_slot_coverage <= 1.0:
            raise InvalidInputError("min_slot_coverage must lie in [0, 1]")
        if self.tsl_cap_hours <= 0:
            raise InvalidInputError("tsl_cap_hours must be positive")

    @classmethod
    def for_style(cls, dataset_tag: str, **overrides) -> "ExtractionConfig":
        params = {"alpha": DEFAULT_ALPHA.get(dataset_tag, 120)}
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**params)

    @property
    def alpha_sec(self) -> int:
        return self.alpha * 60

    @property
    def slot_sec(self) -> int:
        return self.slot_len * 60


@dataclass(frozen=True)
class EatingEpisode:
    episode_id: str
    participant_id: str
    time: int  # local seconds since epoch
    label: str
    meal_kind: str
    activity_code: int
    loc_code: int

    @property
    def timestamp(self):
        return from_seconds(self.time)


def cohort_episodes(cohort: CohortStore, participant_id: str) -> list[EatingEpisode]:
    """Eating reports of one participant in time order, with stable ids."""
    s = cohort.stream(participant_id, "report")
    c = s.columns
    return [
        EatingEpisode(f"{participant_id}#{k}", participant_id, int(s.t[k]),
                      LABELS[c["social"][k]], MEAL_KINDS[c["meal"][k]],
                      int(c["activity_code"][k]), int(c["loc_code"][k]))
        for k in range(len(s))
    ]


# ---------------------------------------------------------------- windows


@dataclass(frozen=True)
class Window:
    before: tuple[int, int]  # [lo, hi)
    after: tuple[int, int]   # (lo, hi]

    @property
    def start(self):
        return self.before[0]

    @property
    def end(self):
        return self.after[1]


def window_bounds(t: int, alpha_minutes: int) -> Window:
    if alpha_minutes <= 0:
        raise InvalidInputError("alpha must be positive")
    a = alpha_minutes * 60
    return Window((t - a, t), (t, t + a))


def slot_starts(t: int, alpha_minutes: int, slot_len: int, side: str) -> tuple[int, int]:
    """Half-open range of slot start times making up one side of the window.

    Before: every slot with start < T that overlaps ``[T - alpha, T)``.
    After: every slot with start >= T that begins before ``T + alpha``.
    """
    a, L = alpha_minutes * 60, slot_len * 60
    if side == "bef":
        return ((t - a) // L) * L, t
    return -(-t // L) * L, -(-(t + a) // L) * L


def _expected_slots(lo: int, hi: int, L: int) -> int:
    return max(0, -(-(hi - lo) // L))


def _in_window(t: np.ndarray, t0: int, w: Window) -> np.ndarray:
    return (t >= w.start) & (t <= w.end) & (t != t0)


# ---------------------------------------------------------------- slots


@dataclass(frozen=True)
class SlotTable:
    """Aggregated values per non-empty slot of one (participant, modality)."""

    kind: str
    start: np.ndarray
    columns: Mapping[str, np.ndarray]
    objects: Mapping[str, list] = field(default_factory=dict)

    def __len__(self):
        return len(self.start)

    def select(self, lo: int, hi: int) -> np.ndarray:
        a, b = np.searchsorted(self.start, [lo, hi], side="left")
        return np.arange(a, b)


def _group(t: np.ndarray, L: int):
    slots = t // L
    uniq, inv = np.unique(slots, return_inverse=True)
    return uniq * L, inv


def _slot_wearable(s: Stream, L: int) -> SlotTable:
    start, inv = _group(s.t, L)
    n = len(start)
    records = np.bincount(inv, minlength=n).astype(float)
    minute = s.t // 60
    new_minute = np.ones(len(minute), dtype=float)
    new_minute[1:] = minute[1:] != minute[:-1]
    minutes = np.bincount(inv, weights=new_minute, minlength=n)
    # duplicate minute records are averaged rather than double counted
    scale = minutes / records
    cols = {"steps": np.bincount(inv, weights=s["steps"].astype(float), minlength=n) * scale}
    for j, level in enumerate(ACTIVITY_LEVELS):
        cols[f"min_{level}"] = np.bincount(inv, weights=(s["level"] == j).astype(float),
                                           minlength=n) * scale
    return SlotTable("wearable", start, cols)


def _slot_accel(s: Stream, L: int) -> SlotTable:
    start, inv = _group(s.t, L)
    n = len(start)
    count = np.bincount(inv, minlength=n).astype(float)
    cols = {"n": count}
    for axis in "xyz":
        v = s[axis]
        cols[f"mean_{axis}"] = np.bincount(inv, weights=v, minlength=n) / count
        cols[f"mean_abs_{axis}"] = np.bincount(inv, weights=np.abs(v), minlength=n) / count
    return SlotTable("accel", start, cols)


def screen_intervals(s: Stream) -> tuple[list[tuple[int, int | None]], np.ndarray]:
    """On-intervals and off->on transition times of a screen event stream.

    The state before the first event is off. An interval whose end is None
    is still open after the last event.
    """
    intervals, transitions = [], []
    on_since = None
    for t, on in zip(s.t.tolist(), s["on"].tolist()):
        if on and on_since is None:
            on_since = t
            transitions.append(t)
        elif not on and on_since is not None:
            intervals.append((on_since, t))
            on_since = None
    if on_since is not None:
        intervals.append((on_since, None))
    return intervals, np.asarray(transitions, dtype=np.int64)


def _slot_screen(s: Stream, L: int) -> SlotTable:
    intervals, transitions = screen_intervals(s)
    on_sec: dict[int, float] = {}
    count: dict[int, int] = {}
    for t in transitions.tolist():
        k = (t // L) * L
        count[k] = count.get(k, 0) + 1
        on_sec.setdefault(k, 0.0)
    for t in s.t.tolist():
        on_sec.setdefault((t // L) * L, 0.0)
    for lo, hi in intervals:
        if hi is None:
            hi = (lo // L + 1) * L  # open interval closes with its slot
        k = (lo // L) * L
        while k < hi:
            seg = min(hi, k + L) - max(lo, k)
            if seg > 0:
                on_sec[k] = on_sec.get(k, 0.0) + seg
            k += L
    start = np.array(sorted(on_sec), dtype=np.int64)
    return SlotTable("screen", start, {
        "on_seconds": np.array([on_sec[k] for k in start.tolist()]),
        "on_transitions": np.array([count.get(k, 0) for k in start.tolist()], dtype=float),
    })


def _slot_battery(s: Stream, L: int) -> SlotTable:
    start, inv = _group(s.t, L)
    n = len(start)
    count = np.bincount(inv, minlength=n).astype(float)
    return SlotTable("battery", start, {
        "mean_level": np.bincount(inv, weights=s["level"], minlength=n) / count,
        "charging": (np.bincount(inv, weights=s["charging"].astype(float), minlength=n) > 0
                     ).astype(float),
    })


def _slot_app(s: Stream, L: int) -> SlotTable:
    start, inv = _group(s.t, L)
    apps = [set() for _ in range(len(start))]
    for k, app in zip(inv.tolist(), s["app"].tolist()):
        apps[k].add(app)
    return SlotTable("app", start, {}, {"apps": [tuple(sorted(a)) for a in apps]})


def _slot_location(s: Stream, L: int) -> SlotTable:
    start, inv = _group(s.t, L)
    lat, lon = s["lat"], s["lon"]
    points = [[] for _ in range(len(start))]
    for i, k in enumerate(inv.tolist()):
        points[k].append((float(lat[i]), float(lon[i])))
    return SlotTable("location", start, {}, {"points": points})


_SLOTTERS = {
    "wearable": _slot_wearable,
    "accel": _slot_accel,
    "screen": _slot_screen,
    "battery": _slot_battery,
    "app": _slot_app,
    "location": _slot_location,
}


def slotize_stream(stream: Stream, config: ExtractionConfig) -> SlotTable:
    if not len(stream):
        return SlotTable(stream.kind, np.empty(0, dtype=np.int64), {})
    return _SLOTTERS[stream.kind](stream, config.slot_sec)


def slotize(cohort: CohortStore, config: ExtractionConfig) -> dict[tuple[str, str], SlotTable]:
    """Slot tables for every non-empty (participant, sensing modality)."""
    out = {}
    for pid in cohort.participants:
        for kind in _SLOTTERS:
            stream = cohort.stream(pid, kind)
            if len(stream):
                out[(pid, kind)] = slotize_stream(stream, config)
    return out


# ---------------------------------------------------------------- feature ops

WEARABLE_STATS = ("tot_steps", "mean_steps", "median_steps", "sd_steps")


def wearable_feature_names() -> list[str]:
    names = []
    for side in SIDES:
        names += [f"{stat}_{side}" for stat in WEARABLE_STATS]
        names += [f"min_{level}_{side}" for level in ACTIVITY_LEVELS]
    return names


def accel_feature_names() -> list[str]:
    names = []
    for side in SIDES:
        names += [f"acc_{axis}_{side}" for axis in "xyz"]
        names += [f"acc_{axis}_abs_{side}" for axis in "xyz"]
    return names


def _side_slots(slots: SlotTable, episode: EatingEpisode, config: ExtractionConfig, side: str):
    lo, hi = slot_starts(episode.time, config.alpha, config.slot_len, side)
    expected = _expected_slots(lo, hi, config.slot_sec)
    idx = slots.select(lo, hi) if len(slots) else np.empty(0, dtype=int)
    covered = expected > 0 and len(idx) / expected >= config.min_slot_coverage and len(idx) > 0
    return idx, covered


def sample_sd(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def wearable_features(slots: SlotTable, episode: EatingEpisode,
                      config: ExtractionConfig) -> dict[str, float]:
    out = {}
    for side in SIDES:
        idx, covered = _side_slots(slots, episode, config, side)
        if not covered:
            out.update({f"{s}_{side}": math.nan for s in WEARABLE_STATS})
            out.update({f"min_{lv}_{side}": math.nan for lv in ACTIVITY_LEVELS})
            continue
        steps = slots.columns["steps"][idx]
        out[f"tot_steps_{side}"] = float(steps.sum())
        out[f"mean_steps_{side}"] = float(steps.mean())
        out[f"median_steps_{side}"] = float(np.median(steps))
        out[f"sd_steps_{side}"] = sample_sd(steps)
        for lv in ACTIVITY_LEVELS:
            out[f"min_{lv}_{side}"] = float(slots.columns[f"min_{lv}"][idx].sum())
    return out


def accel_features(slots: SlotTable, episode: EatingEpisode,
                   config: ExtractionConfig) -> dict[str, float]:
    out = {}
    for side in SIDES:
        idx, covered = _side_slots(slots, episode, config, side)
        for axis in "xyz":
            if covered:
                out[f"acc_{axis}_{side}"] = float(slots.columns[f"mean_{axis}"][idx].mean())
                out[f"acc_{axis}_abs_{side}"] = float(
                    slots.columns[f"mean_abs_{axis}"][idx].mean())
            else:
                out[f"acc_{axis}_{side}"] = math.nan
                out[f"acc_{axis}_abs_{side}"] = math.nan
    return out


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters (arrays broadcast)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def radius_of_gyration(points) -> float:
    """RMS haversine distance of points from their lat/lon centroid; NaN if empty."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not len(pts):
        return math.nan
    lat, lon = pts[:, 0], pts[:, 1]
    d = haversine(lat, lon, lat.mean(), lon.mean())
    return float(np.sqrt(np.mean(d ** 2)))


def location_features(events: Stream, episode: EatingEpisode,
                      config: ExtractionConfig) -> dict[str, float]:
    w = window_bounds(episode.time, config.alpha)
    sub = events.window(w.start, w.end, hi_open=False)
    keep = sub.t != episode.time
    return {"location": radius_of_gyration(np.column_stack([sub["lat"][keep],
                                                           sub["lon"][keep]]))}


def screen_features(events: Stream, episode: EatingEpisode,
                    config: ExtractionConfig) -> dict[str, float]:
    w = window_bounds(episode.time, config.alpha)
    if not len(events):
        return {"screen_on_sec": 0.0, "screen_on_count": 0.0}
    # the last event before the window fixes the state at its start
    first = max(0, int(np.searchsorted(events.t, w.start, side="left")) - 1)
    upto = events.window(events.t[first], w.end, hi_open=False)
    intervals, transitions = screen_intervals(upto)
    on = 0.0
    for lo, hi in intervals:
        hi = w.end if hi is None else hi
        on += max(0, min(hi, w.end) - max(lo, w.start))
    count = int(np.count_nonzero(_in_window(transitions, episode.time, w)))
    return {"screen_on_sec": float(on), "screen_on_count": float(count)}


def battery_features(events: Stream, episode: EatingEpisode,
                     config: ExtractionConfig) -> dict[str, float]:
    w = window_bounds(episode.time, config.alpha)
    sub = events.window(w.start, w.end, hi_open=False)
    keep = sub.t != episode.time
    levels = sub["level"][keep]
    return {
        "battery_mean_level": float(levels.mean()) if len(levels) else math.nan,
        "charging_event": float(bool(np.any(sub["charging"][keep]))),
    }


def top_apps(cohort: CohortStore, n: int = 10) -> list[str]:
    """Most frequent app ids over the whole cohort; ties by app id."""
    counts: dict[str, int] = {}
    for pid in cohort.participants:
        for app in cohort.stream(pid, "app")["app"].tolist():
            counts[app] = counts.get(app, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [app for app, _ in ranked[:n]]


def app_features(events: Stream, episode: EatingEpisode, apps: Sequence[str],
                 config: ExtractionConfig) -> dict[str, float]:
    w = window_bounds(episode.time, config.alpha)
    sub = events.window(w.start, w.end, hi_open=False)
    used = set(sub["app"][sub.t != episode.time].tolist())
    return {f"app_{a}": float(a in used) for a in apps}


def temporal_features(episode: EatingEpisode, history: Sequence[EatingEpisode],
                      cap_hours: float = 24.0) -> dict[str, float]:
    """Hour of day and hours since the participant's previous report (capped)."""
    day_sec = episode.time % 86400
    prev = [e.time for e in history if e.time < episode.time]
    tsl = cap_hours
    if prev:
        tsl = min(cap_hours, (episode.time - max(prev)) / 3600.0)
    return {"time": day_sec / 3600.0, "time_since_last_meal": tsl}


def selfreport_features(episode: EatingEpisode,
                        vocabulary: Mapping[str, Sequence[int]]) -> dict[str, float]:
    if episode.activity_code not in vocabulary["activity_code"]:
        raise InvalidInputError(
            f"activity_code {episode.activity_code} not in vocabulary ({episode.episode_id})")
    if episode.loc_code not in vocabulary["loc_code"]:
        raise InvalidInputError(
            f"loc_code {episode.loc_code} not in vocabulary ({episode.episode_id})")
    return {"concurrent_activity": float(episode.activity_code),
            "loc_category": float(episode.loc_code)}


# ---------------------------------------------------------------- matrix


@dataclass(frozen=True)
class Feature:
    name: str
    group: str
    kind: str = "numeric"  # numeric | binary | categorical
    levels: tuple[int, ...] = ()


def feature_catalog(dataset_tag: str, apps: Sequence[str],
                    vocabulary: Mapping[str, Sequence[int]]) -> list[Feature]:
    cat = [Feature("time", "T"), Feature("time_since_last_meal", "T")]
    wearable = dataset_tag in ("wearable-style", "custom")
    phone = dataset_tag in ("phone-style", "custom")
    if wearable:
        cat += [Feature(n, "A_fb") for n in wearable_feature_names()]
    if phone:
        cat += [Feature(n, "A_sp") for n in accel_feature_names()]
    cat.append(Feature("location", "C_ps"))
    if phone:
        cat += [Feature("screen_on_sec", "C_ps"), Feature("screen_on_count", "C_ps"),
                Feature("battery_mean_level", "C_ps"),
                Feature("charging_event", "C_ps", "binary")]
        cat += [Feature(f"app_{a}", "C_ps", "binary") for a in apps]
    cat += [Feature("concurrent_activity", "C_sr", "categorical",
                    tuple(sorted(vocabulary["activity_code"]))),
            Feature("loc_category", "C_sr", "categorical",
                    tuple(sorted(vocabulary["loc_code"])))]
    return cat


class FeatureMatrix:
    """One row per eating episode; NaN marks a missing value."""

    def __init__(self, catalog: Sequence[Feature], episode_ids: Sequence[str],
                 participant_ids: Sequence[str], labels, values, log: dict | None = None):
        self.catalog = list(catalog)
        names = [f.name for f in self.catalog]
        if len(set(names)) != len(names):
            raise InvalidInputError("duplicate feature names in catalog")
        self.episode_ids = list(episode_ids)
        self.participant_ids = list(participant_ids)
        self.labels = np.asarray(labels, dtype=np.int8)
        self.values = np.asarray(values, dtype=float).reshape(len(self.episode_ids), len(names))
        if not (len(self.participant_ids) == len(self.labels) == len(self.episode_ids)):
            raise InvalidInputError("row metadata length mismatch")
        self.log = dict(log or {})

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.catalog]

    @property
    def n_rows(self) -> int:
        return len(self.episode_ids)

    def __len__(self):
        return self.n_rows

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def feature(self, name: str) -> Feature:
        for f in self.catalog:
            if f.name == name:
                return f
        raise KeyError(name)

    def with_labels(self, labels) -> "FeatureMatrix":
        return FeatureMatrix(self.catalog, self.episode_ids, self.participant_ids, labels,
                             self.values, self.log)

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=int)
        return FeatureMatrix(self.catalog, [self.episode_ids[i] for i in rows],
                             [self.participant_ids[i] for i in rows], self.labels[rows],
                             self.values[rows], self.log)

    # -- serialization

    def catalog_json(self) -> dict:
        return {
            "features": [{"name": f.name, "group": f.group, "kind": f.kind,
                          "levels": list(f.levels)} for f in self.catalog],
            "groups": {f.name: f.group for f in self.catalog},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode_id", "participant_id", "label"] + self.feature_names)
        for i in range(self.n_rows):
            w.writerow([self.episode_ids[i], self.participant_ids[i], LABELS[self.labels[i]]]
                       + [format_value(v) for v in self.values[i]])
        return buf.getvalue()

    def write(self, csv_path, catalog_path=None) -> None:
        csv_path = Path(csv_path)
        csv_path.write_text(self.to_csv(), encoding="utf-8", newline="\n")
        catalog_path = Path(catalog_path) if catalog_path else catalog_path_for(csv_path)
        catalog_path.write_text(json.dumps(self.catalog_json(), indent=2) + "\n",
                                encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str, catalog: Sequence[Feature] | Mapping) -> "FeatureMatrix":
        if isinstance(catalog, Mapping):
            catalog = [Feature(f["name"], f["group"], f.get("kind", "numeric"),
                               tuple(f.get("levels", ()))) for f in catalog["features"]]
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise InvalidInputError("empty matrix CSV")
        header = rows[0]
        names = [f.name for f in catalog]
        if header[:3] != ["episode_id", "participant_id", "label"] or header[3:] != names:
            raise InvalidInputError("matrix CSV header does not match the catalog")
        ids, pids, labels, values = [], [], [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != len(header):
                raise InvalidInputError("wrong number of cells", line=lineno)
            if row[2] not in LABELS:
                raise InvalidInputError(f"unknown label '{row[2]}'", line=lineno)
            ids.append(row[0])
            pids.append(row[1])
            labels.append(LABELS.index(row[2]))
            try:
                values.append([float(c) if c != "" else math.nan for c in row[3:]])
            except ValueError:
                raise InvalidInputError("non-numeric feature value", line=lineno) from None
        return cls(catalog, ids, pids, labels,
                   np.array(values, dtype=float).reshape(len(ids), len(names)))

    @classmethod
    def read(cls, csv_path, catalog_path=None) -> "FeatureMatrix":
        csv_path = Path(csv_path)
        catalog_path = Path(catalog_path) if catalog_path else catalog_path_for(csv_path)
        if not csv_path.is_file():
            raise InvalidInputError("matrix file not found", source=str(csv_path))
        if not catalog_path.is_file():
            raise InvalidInputError("catalog file not found", source=str(catalog_path))
        try:
            catalog = json.loads(catalog_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            raise InvalidInputError("malformed JSON", source=str(catalog_path)) from None
        try:
            return cls.from_csv(csv_path.read_text(encoding="utf-8"), catalog)
        except InvalidInputError as exc:
            raise InvalidInputError(exc.reason, source=str(csv_path), line=exc.line) from None


def catalog_path_for(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".catalog.json")


def format_value(v: float) -> str:
    if math.isnan(v):
        return ""
    s = f"{v:.6g}"
    return "0" if s == "-0" else s


def design(matrix: FeatureMatrix) -> tuple[list[Feature], np.ndarray]:
    """Numeric design: categoricals one-hot expanded, other columns passed through.

    One-hot columns are named ``<feature>=<code>`` and are binary. A missing
    categorical value stays missing in every indicator column.
    """
    feats, cols = [], []
    for j, f in enumerate(matrix.catalog):
        v = matrix.values[:, j]
        if f.kind == "categorical":
            for code in f.levels:
                ind = (v == code).astype(float)
                ind[np.isnan(v)] = math.nan
                feats.append(Feature(f"{f.name}={code}", f.group, "binary"))
                cols.append(ind)
        else:
            feats.append(f)
            cols.append(v)
    X = np.column_stack(cols) if cols else np.empty((matrix.n_rows, 0))
    return feats, X


def _participant_rows(cohort, pid, slots, config, catalog, apps):
    episodes = cohort_episodes(cohort, pid)
    names = [f.name for f in catalog]
    have = set(names)
    wear = slots.get((pid, "wearable"), SlotTable("wearable", np.empty(0, np.int64), {}))
    acc = slots.get((pid, "accel"), SlotTable("accel", np.empty(0, np.int64), {}))
    streams = {k: cohort.stream(pid, k) for k in ("location", "screen", "battery", "app")}
    rows = []
    for k, ep in enumerate(episodes):
        feats = temporal_features(ep, episodes[:k], config.tsl_cap_hours)
        if "tot_steps_bef" in have:
            feats.update(wearable_features(wear, ep, config))
        if "acc_x_bef" in have:
            feats.update(accel_features(acc, ep, config))
        feats.update(location_features(streams["location"], ep, config))
        if "screen_on_sec" in have:
            feats.update(screen_features(streams["screen"], ep, config))
            feats.update(battery_features(streams["battery"], ep, config))
            feats.update(app_features(streams["app"], ep, apps, config))
        feats.update(selfreport_features(ep, cohort.manifest.vocabulary))
        rows.append((ep, [feats[n] for n in names]))
    return rows


def build_matrix(cohort: CohortStore, config: ExtractionConfig) -> FeatureMatrix:
    """One row per eating report, in manifest order then report time.

    Rows with more than ``config.max_missing_fraction`` missing features are
    dropped and recorded in ``matrix.log``.
    """
    if cohort.n_records("report") == 0:
        raise DegenerateDataError("empty cohort")
    tag = cohort.manifest.dataset_tag
    apps = []
    if tag in ("phone-style", "custom"):
        apps = top_apps(cohort, config.top_n_apps)
    catalog = feature_catalog(tag, apps, cohort.manifest.vocabulary)
    slots = slotize(cohort, config)
    ids, pids, labels, values, dropped = [], [], [], [], []
    n_feat = len(catalog)
    for pid in cohort.participants:
        for ep, row in _participant_rows(cohort, pid, slots, config, catalog, apps):
            missing = sum(1 for v in row if math.isnan(v))
            if missing / n_feat > config.max_missing_fraction:
                dropped.append(ep.episode_id)
                continue
            ids.append(ep.episode_id)
            pids.append(pid)
            labels.append(LABELS.index(ep.label))
            values.append(row)
    log = {
        "n_episodes": len(ids) + len(dropped),
        "n_rows": len(ids),
        "n_dropped": len(dropped),
        "dropped": dropped,
        "dataset_tag": tag,
        "top_apps": apps,
    }
    return FeatureMatrix(catalog, ids, pids, labels,
                         np.array(values, dtype=float).reshape(len(ids), n_feat), log)
