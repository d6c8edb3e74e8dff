"""Synthetic cohorts with planted class differences.

A cohort is generated participant by participant. Eating episodes are drawn
from a per-meal mixture of daily peaks, each with its own probability of
being eaten alone. For every episode and window side, latent standard-normal
scores drive the raw records (per-minute wearable data, accelerometer
samples, GPS fixes, screen sessions, battery samples, app events). A planted
effect ``d`` shifts the latent score by ``+d/2`` for alone episodes and
``-d/2`` otherwise, so the extracted feature's standardized mean difference
(alone minus with_others) is ``d`` in expectation.

Episodes of one participant are kept at least ``alpha + 20`` minutes apart.
With that spacing the before-window slots of distinct episodes never
overlap, so before-side plants are recovered exactly up to sampling noise.
After-side plants are diluted when the next episode follows within
``2 * alpha``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Mapping

import numpy as np

from .episodes import DEFAULT_ALPHA, slot_starts
from .errors import InvalidInputError
from .ingest import (CohortStore, Manifest, Stream, format_timestamp, from_seconds,
                     to_seconds, write_store)

SLOT_LEN = 10
SPACING_MARGIN_MIN = 20
RESAMPLE_TRIES = 20

ACTIVITY_VOCAB = tuple(range(6))  # nothing, study/work, phone, screen media, talking, other
LOCATION_VOCAB = tuple(range(5))  # home, university, restaurant, friends, other
_ACTIVITY_P = {
    "alone": np.array([0.10, 0.35, 0.20, 0.25, 0.02, 0.08]),
    "with_others": np.array([0.15, 0.05, 0.10, 0.10, 0.55, 0.05]),
}
_LOCATION_P = {
    "alone": np.array([0.60, 0.20, 0.05, 0.05, 0.10]),
    "with_others": np.array([0.30, 0.30, 0.20, 0.15, 0.05]),
}

APPS = ("whatsapp", "instagram", "chrome", "facebook", "youtube", "spotify",
        "google search", "messenger", "gmail", "maps", "snapchat", "twitter", "netflix",
        "uber", "telegram", "tiktok", "camera", "calendar", "clock", "settings", "photos",
        "calculator", "weather", "duolingo", "banking")

_HOME = {"wearable-style": (46.5197, 6.6323), "phone-style": (22.1565, -100.9855)}
_LEVEL_STEP_WEIGHT = np.array([0.05, 1.0, 2.5, 4.0])  # sedentary .. very


@dataclass(frozen=True)
class MealSpec:
    name: str
    kind: str  # meal | snack
    peak_hour: float
    spread_hours: float
    p_occur: float
    p_alone: float


WEARABLE_MEALS = (
    MealSpec("breakfast", "meal", 7.5, 0.75, 0.60, 0.75),
    MealSpec("lunch", "meal", 12.5, 0.6, 0.75, 0.30),
    MealSpec("dinner", "meal", 19.0, 1.0, 0.65, 0.50),
    MealSpec("snack", "snack", 16.0, 2.5, 0.60, 0.55),
)
PHONE_MEALS = (
    MealSpec("breakfast", "meal", 10.0, 0.8, 0.55, 0.55),
    MealSpec("lunch", "meal", 14.5, 0.8, 0.60, 0.30),
    MealSpec("dinner", "meal", 21.0, 1.0, 0.50, 0.30),
    MealSpec("morning_snack", "snack", 12.0, 1.0, 0.58, 0.45),
    MealSpec("evening_snack", "snack", 18.0, 1.5, 0.58, 0.40),
)

_STYLE_DEFAULTS = {
    "wearable-style": {
        "n_participants": 122,
        "meals": WEARABLE_MEALS,
        "planted_effects": {"min_lightly_bef": -0.33, "mean_steps_bef": -0.2,
                            "location": 0.27},
        "start_date": "2019-03-04",
    },
    "phone-style": {
        "n_participants": 84,
        "meals": PHONE_MEALS,
        "planted_effects": {"location": 0.37, "acc_y_aft": 0.15,
                            "battery_mean_level": 0.1},
        "start_date": "2019-09-02",
    },
}


def plantable_features(style: str) -> tuple[str, ...]:
    names = ["location"]
    for side in ("bef", "aft"):
        if style == "wearable-style":
            names += [f"min_lightly_{side}", f"min_fairly_{side}", f"min_very_{side}",
                      f"mean_steps_{side}", f"tot_steps_{side}"]
        else:
            names += [f"acc_{axis}_{side}" for axis in "xyz"]
    if style == "phone-style":
        names += ["screen_on_sec", "battery_mean_level"]
    return tuple(names)


@dataclass(frozen=True)
class CohortSpec:
    seed: int
    style: str = "wearable-style"
    n_participants: int = 122
    n_days: int = 14
    start_date: str = "2019-03-04"
    meals: tuple[MealSpec, ...] = WEARABLE_MEALS
    planted_effects: Mapping[str, float] = field(default_factory=dict)
    label_signal_strength: float = 0.5
    participant_correlation: float = 0.2
    wear_gap_prob: float = 0.03
    alpha: int | None = None

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise InvalidInputError("seed is required (integer)")
        if self.style not in _STYLE_DEFAULTS:
            raise InvalidInputError("style must be wearable-style or phone-style")
        if self.alpha is None:
            object.__setattr__(self, "alpha", DEFAULT_ALPHA[self.style])
        if self.n_participants < 2:
            raise InvalidInputError("n_participants must be >= 2")
        if self.n_days < 1:
            raise InvalidInputError("n_days must be >= 1")
        try:
            datetime.strptime(self.start_date, "%Y-%m-%d")
        except ValueError:
            raise InvalidInputError("start_date must be YYYY-MM-DD") from None
        for p in (self.label_signal_strength, self.participant_correlation, self.wear_gap_prob):
            if not 0.0 <= p <= 1.0:
                raise InvalidInputError("probabilities must lie in [0, 1]")
        if not self.meals:
            raise InvalidInputError("at least one meal is required")
        for m in self.meals:
            if m.kind not in ("meal", "snack"):
                raise InvalidInputError(f"meal kind must be meal or snack ({m.name})")
            if not (0.0 <= m.p_occur <= 1.0 and 0.0 <= m.p_alone <= 1.0):
                raise InvalidInputError(f"probabilities must lie in [0, 1] ({m.name})")
            if not 0.0 <= m.peak_hour < 24.0 or m.spread_hours <= 0:
                raise InvalidInputError(f"invalid peak or spread ({m.name})")
        allowed = plantable_features(self.style)
        for name, d in self.planted_effects.items():
            if name not in allowed:
                raise InvalidInputError(f"feature '{name}' cannot be planted in {self.style}")
            if not math.isfinite(d):
                raise InvalidInputError(f"planted d for '{name}' must be finite")
        for side in ("bef", "aft"):
            if {f"mean_steps_{side}", f"tot_steps_{side}"} <= set(self.planted_effects):
                raise InvalidInputError(f"plant either mean_steps_{side} or tot_steps_{side}")
        if self.window_alpha <= 0 or self.window_alpha % SLOT_LEN:
            raise InvalidInputError("alpha must be a positive multiple of 10 minutes")

    @property
    def window_alpha(self) -> int:
        return self.alpha

    @property
    def dataset_tag(self) -> str:
        return self.style

    @classmethod
    def default(cls, style: str = "wearable-style", *, seed: int, **overrides) -> "CohortSpec":
        if style not in _STYLE_DEFAULTS:
            raise InvalidInputError("style must be wearable-style or phone-style")
        params = dict(_STYLE_DEFAULTS[style])
        params.update(overrides)
        return cls(seed=seed, style=style, **params)

    @classmethod
    def from_json(cls, doc: Mapping, *, seed: int | None = None) -> "CohortSpec":
        """Spec from a JSON document; style defaults fill unspecified fields."""
        if not isinstance(doc, Mapping):
            raise InvalidInputError("spec must be a JSON object")
        doc = dict(doc)
        if seed is not None:
            doc["seed"] = seed
        if "seed" not in doc:
            raise InvalidInputError("seed is required")
        style = doc.pop("style", "wearable-style")
        known = {f for f in cls.__dataclass_fields__ if f not in ("style",)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown spec fields: {', '.join(sorted(unknown))}")
        if "meals" in doc:
            try:
                doc["meals"] = tuple(MealSpec(**m) for m in doc["meals"])
            except TypeError as exc:
                raise InvalidInputError(f"invalid meal entry: {exc}") from None
        seed_value = doc.pop("seed")
        return cls.default(style, seed=seed_value, **doc)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["meals"] = [asdict(m) for m in self.meals]
        doc["planted_effects"] = dict(sorted(self.planted_effects.items()))
        return doc


def _latent_params(alpha: int) -> dict[str, tuple[float, float]]:
    window = 2 * alpha * 60
    return {
        "min_lightly": (0.30 * alpha, 0.08 * alpha),
        "min_fairly": (0.10 * alpha, 0.03 * alpha),
        "min_very": (0.06 * alpha, 0.02 * alpha),
        "steps_per_slot": (170.0, 50.0),
        "acc_x": (0.3, 0.5),
        "acc_y": (4.0, 1.2),
        "acc_z": (7.0, 1.2),
        "location": (400.0, 120.0),
        "screen_on_sec": (0.25 * window, 0.08 * window),
        "battery_mean_level": (60.0, 12.0),
    }


def _latent_keys(style: str) -> list[str]:
    keys = ["location"]
    for side in ("bef", "aft"):
        if style == "wearable-style":
            keys += [f"min_lightly_{side}", f"min_fairly_{side}", f"min_very_{side}",
                     f"steps_{side}"]
        else:
            keys += [f"acc_{axis}_{side}" for axis in "xyz"]
    if style == "phone-style":
        keys += ["screen_on_sec", "battery_mean_level"]
    return keys


def _planted_key(name: str) -> str:
    for form in ("mean_steps_", "tot_steps_"):
        if name.startswith(form):
            return "steps_" + name[len(form):]
    return name


@dataclass
class _Episode:
    time: int
    meal: MealSpec
    label: str
    latent: dict = field(default_factory=dict)
    activity_code: int = 0
    loc_code: int = 0
    zone: int = 0  # half-width in seconds of the exclusive event zone


@dataclass
class SyntheticCohort:
    store: CohortStore
    ground_truth: dict
    spec: CohortSpec

    @property
    def n_episodes(self) -> int:
        return self.store.n_records("report")

    def write(self, out_dir) -> list[Path]:
        paths = write_store(self.store, out_dir)
        gt = Path(out_dir) / "ground_truth.json"
        gt.write_text(json.dumps(self.ground_truth, indent=1, sort_keys=True) + "\n",
                      encoding="utf-8")
        return paths + [gt]


class _Generator:
    def __init__(self, spec: CohortSpec):
        self.spec = spec
        self.alpha = spec.window_alpha
        self.alpha_sec = self.alpha * 60
        self.params = _latent_params(self.alpha)
        self.keys = _latent_keys(spec.style)
        self.shift = {_planted_key(k): d for k, d in spec.planted_effects.items()}
        self.day0 = to_seconds(datetime.strptime(spec.start_date, "%Y-%m-%d"))
        s = spec.label_signal_strength
        self.activity_p = {lab: (1 - s) * (_ACTIVITY_P["alone"] + _ACTIVITY_P["with_others"]) / 2
                           + s * p for lab, p in _ACTIVITY_P.items()}
        self.location_p = {lab: (1 - s) * (_LOCATION_P["alone"] + _LOCATION_P["with_others"]) / 2
                           + s * p for lab, p in _LOCATION_P.items()}
        ranks = np.arange(len(APPS))
        self.app_p = 0.8 / (ranks + 1.0) ** 0.9

    # -- schedule

    def _draw_time(self, rng, meal: MealSpec, day: int) -> int:
        for _ in range(100):
            h = rng.normal(meal.peak_hour, meal.spread_hours)
            if 0.0 <= h < 24.0:
                break
        else:
            h = meal.peak_hour
        return self.day0 + day * 86400 + int(h * 60) * 60

    def schedule(self, rng) -> list[_Episode]:
        spacing = (self.alpha + SPACING_MARGIN_MIN) * 60
        accepted: list[int] = []
        episodes = []
        for day in range(self.spec.n_days):
            for meal in self.spec.meals:
                if rng.random() >= meal.p_occur:
                    continue
                for _ in range(RESAMPLE_TRIES):
                    t = self._draw_time(rng, meal, day)
                    if all(abs(t - a) >= spacing for a in accepted):
                        break
                else:
                    continue
                accepted.append(t)
                label = "alone" if rng.random() < meal.p_alone else "with_others"
                episodes.append(_Episode(t, meal, label))
        episodes.sort(key=lambda e: e.time)
        return episodes

    # -- per-episode latents

    def assign_latents(self, rng, episodes: list[_Episode]) -> None:
        rho = self.spec.participant_correlation
        person = {k: rng.standard_normal() for k in self.keys}
        for ep in episodes:
            sign = 0.5 if ep.label == "alone" else -0.5
            for k in self.keys:
                z = math.sqrt(1 - rho) * rng.standard_normal() + math.sqrt(rho) * person[k]
                ep.latent[k] = z + sign * self.shift.get(k, 0.0)
            ep.activity_code = int(rng.choice(ACTIVITY_VOCAB, p=self.activity_p[ep.label]))
            ep.loc_code = int(rng.choice(LOCATION_VOCAB, p=self.location_p[ep.label]))
        for i, ep in enumerate(episodes):
            h = self.alpha_sec
            if i > 0:
                h = min(h, ep.time - episodes[i - 1].time - self.alpha_sec - 60)
            if i + 1 < len(episodes):
                h = min(h, episodes[i + 1].time - ep.time - self.alpha_sec - 60)
            ep.zone = h

    def value(self, ep: _Episode, key: str, param: str) -> float:
        mu, sd = self.params[param]
        return mu + sd * ep.latent[key]

    # -- slot ownership for slot-based modalities

    def owned_slots(self, episodes: list[_Episode]) -> dict[tuple[int, str], list[int]]:
        L = SLOT_LEN * 60
        owner: dict[int, tuple[int, str]] = {}
        for side in ("aft", "bef"):  # before-window slots take priority
            for i, ep in enumerate(episodes):
                lo, hi = slot_starts(ep.time, self.alpha, SLOT_LEN, side)
                for s in range(lo, hi, L):
                    owner[s] = (i, side)
        owned: dict[tuple[int, str], list[int]] = {}
        for s in sorted(owner):
            owned.setdefault(owner[s], []).append(s)
        return owned

    def nominal_slots(self, ep: _Episode, side: str) -> int:
        lo, hi = slot_starts(ep.time, self.alpha, SLOT_LEN, side)
        return (hi - lo) // (SLOT_LEN * 60)

    # -- modalities

    def wearable(self, rng, episodes):
        ts, steps, levels = [], [], []
        for (i, side), slots in self.owned_slots(episodes).items():
            if rng.random() < self.spec.wear_gap_prob:
                continue
            ep = episodes[i]
            frac = len(slots) / self.nominal_slots(ep, side)
            n_min = SLOT_LEN * len(slots)
            very = int(np.clip(round(frac * self.value(ep, f"min_very_{side}", "min_very")),
                               0, n_min))
            fairly = int(np.clip(round(frac * self.value(ep, f"min_fairly_{side}",
                                                          "min_fairly")), 0, n_min - very))
            light = int(np.clip(round(frac * self.value(ep, f"min_lightly_{side}",
                                                         "min_lightly")),
                                0, n_min - very - fairly))
            lv = np.zeros(n_min, dtype=np.int8)
            lv[:very] = 3
            lv[very:very + fairly] = 2
            lv[very + fairly:very + fairly + light] = 1
            lv = rng.permutation(lv)
            per_slot = self.value(ep, f"steps_{side}", "steps_per_slot")
            if f"tot_steps_{side}" in self.spec.planted_effects:
                total = frac * per_slot * self.nominal_slots(ep, side)
            else:
                total = per_slot * len(slots)
            w = _LEVEL_STEP_WEIGHT[lv]
            st = rng.multinomial(max(0, int(round(total))), w / w.sum())
            minute = np.arange(SLOT_LEN) * 60
            ts.append((np.asarray(slots)[:, None] + minute[None, :]).ravel())
            steps.append(st)
            levels.append(lv)
        return self._stream("wearable", ts, {"steps": steps, "level": levels})

    def accel(self, rng, episodes):
        ts, cols = [], {"x": [], "y": [], "z": []}
        for (i, side), slots in self.owned_slots(episodes).items():
            if rng.random() < self.spec.wear_gap_prob:
                continue
            ep = episodes[i]
            starts = np.asarray(slots)
            t = (starts[:, None] + np.arange(SLOT_LEN)[None, :] * 60
                 + rng.integers(0, 60, (len(slots), SLOT_LEN)))
            ts.append(t.ravel())
            for axis in "xyz":
                m = self.value(ep, f"acc_{axis}_{side}", f"acc_{axis}")
                noise = rng.normal(0.0, 1.5, (len(slots), SLOT_LEN))
                noise -= noise.mean(axis=1, keepdims=True)
                cols[axis].append((m + noise).ravel())
        return self._stream("accel", ts, cols)

    def _zone_times(self, rng, ep: _Episode, n: int) -> np.ndarray:
        """``n`` distinct integer times inside the episode zone, never at T."""
        h = ep.zone
        offsets = rng.choice(np.r_[np.arange(-h, 0), np.arange(1, h + 1)], size=n,
                             replace=False)
        return np.sort(ep.time + offsets)

    def location(self, rng, episodes):
        home = _HOME[self.spec.style]
        ts, lat, lon = [], [], []
        for ep in episodes:
            r = max(5.0, self.value(ep, "location", "location"))
            n = 6
            minutes = rng.choice(np.r_[np.arange(-10, 0), np.arange(1, 11)], size=n,
                                 replace=False)
            ts.append(ep.time + np.sort(minutes) * 60)
            off = rng.standard_normal((n, 2))
            off -= off.mean(axis=0)
            off *= r / math.sqrt(np.mean(np.sum(off ** 2, axis=1)))
            c_lat = home[0] + rng.normal(0.0, 0.02)
            c_lon = home[1] + rng.normal(0.0, 0.02)
            deg = 180.0 / (math.pi * 6_371_000.0)
            lat.append(c_lat + off[:, 1] * deg)
            lon.append(c_lon + off[:, 0] * deg / math.cos(math.radians(c_lat)))
        return self._stream("location", ts, {"lat": lat, "lon": lon})

    def screen(self, rng, episodes):
        ts, on = [], []
        for ep in episodes:
            span = 2 * ep.zone
            k = 1 + int(rng.poisson(1.5))
            total = int(np.clip(round(self.value(ep, "screen_on_sec", "screen_on_sec")),
                                k, span - 2 * (k + 1)))
            for _ in range(10):
                durations = 1 + rng.multinomial(total - k, np.full(k, 1.0 / k))
                gaps = 1 + rng.multinomial(span - total - (k + 1), np.full(k + 1, 1.0 / (k + 1)))
                edges = []
                t = ep.time - ep.zone
                for j in range(k):
                    t += gaps[j]
                    edges.append(t)
                    t += durations[j]
                    edges.append(t)
                if ep.time not in edges:
                    break
            ts.append(np.asarray(edges, dtype=np.int64))
            on.append(np.tile([True, False], k))
        return self._stream("screen", ts, {"on": on})

    def battery(self, rng, episodes):
        ts, level, charging = [], [], []
        for ep in episodes:
            t = np.arange(ep.time - ep.zone + 150, ep.time + ep.zone, 300)
            t = t[t != ep.time]
            m = float(np.clip(self.value(ep, "battery_mean_level", "battery_mean_level"),
                              10.0, 90.0))
            noise = rng.normal(0.0, 2.0, len(t))
            noise -= noise.mean()
            ts.append(t)
            level.append(np.clip(m + noise, 0.0, 100.0))
            charging.append(np.full(len(t), rng.random() < 0.25))
        return self._stream("battery", ts, {"level": level, "charging": charging})

    def apps(self, rng, episodes):
        ts, app = [], []
        for ep in episodes:
            used = np.flatnonzero(rng.random(len(APPS)) < self.app_p)
            for a in used.tolist():
                n = 1 + int(rng.poisson(0.5))
                ts.append(self._zone_times(rng, ep, n))
                app.append(np.array([APPS[a]] * n, dtype=object))
        return self._stream("app", ts, {"app": app})

    @staticmethod
    def _stream(kind, ts, cols):
        if not ts:
            return Stream.empty(kind)
        t = np.concatenate(ts)
        return Stream.from_columns(kind, t, {k: np.concatenate(v) for k, v in cols.items()})


def generate_cohort(spec: CohortSpec) -> SyntheticCohort:
    """Generate a cohort; the result depends only on ``spec`` (seed included)."""
    gen = _Generator(spec)
    width = max(3, len(str(spec.n_participants)))
    pids = [f"p{i + 1:0{width}d}" for i in range(spec.n_participants)]
    manifest = Manifest(tuple(pids), spec.dataset_tag,
                        {"activity_code": ACTIVITY_VOCAB, "loc_code": LOCATION_VOCAB})
    streams = {}
    truth = []
    for idx, pid in enumerate(pids):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed & (2**64 - 1), idx]))
        episodes = gen.schedule(rng)
        gen.assign_latents(rng, episodes)
        if spec.style == "wearable-style":
            streams[(pid, "wearable")] = gen.wearable(rng, episodes)
        else:
            streams[(pid, "accel")] = gen.accel(rng, episodes)
            streams[(pid, "screen")] = gen.screen(rng, episodes)
            streams[(pid, "battery")] = gen.battery(rng, episodes)
            streams[(pid, "app")] = gen.apps(rng, episodes)
        streams[(pid, "location")] = gen.location(rng, episodes)
        streams[(pid, "report")] = Stream.from_columns("report", [e.time for e in episodes], {
            "social": [0 if e.label == "alone" else 1 for e in episodes],
            "meal": [0 if e.meal.kind == "meal" else 1 for e in episodes],
            "activity_code": [e.activity_code for e in episodes],
            "loc_code": [e.loc_code for e in episodes],
        })
        for k, e in enumerate(episodes):
            truth.append({"episode_id": f"{pid}#{k}", "participant_id": pid,
                          "time": format_timestamp(from_seconds(e.time)), "label": e.label,
                          "meal": e.meal.name, "meal_kind": e.meal.kind})
    ground_truth = {
        "n_episodes": len(truth),
        "planted_effects": dict(sorted(spec.planted_effects.items())),
        "spec": spec.to_json(),
        "episodes": truth,
    }
    return SyntheticCohort(CohortStore(manifest, streams), ground_truth, spec)


def shuffle_labels(cohort: CohortStore, seed: int) -> CohortStore:
    """Permute eating-report labels across the cohort; sensing data is untouched."""
    pids = [p for p in cohort.participants if len(cohort.stream(p, "report"))]
    reports = [cohort.stream(p, "report") for p in pids]
    labels = np.concatenate([r["social"] for r in reports]) if reports else np.empty(0)
    perm = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x5F])) \
        .permutation(len(labels))
    shuffled = labels[perm]
    updates, pos = {}, 0
    for pid, r in zip(pids, reports):
        cols = dict(r.columns)
        cols["social"] = shuffled[pos:pos + len(r)]
        pos += len(r)
        updates[(pid, "report")] = Stream.from_columns("report", r.t, cols)
    return cohort.replace_streams(updates)
