"""Parsing and indexing of raw sensing and self-report streams.

Every modality arrives as JSON Lines with a participant id ``p`` and a local
wall-clock timestamp ``t`` (``YYYY-MM-DDTHH:MM:SS``, no offset). Parsed records
are merged into a :class:`CohortStore`, which keeps one time-sorted columnar
:class:`Stream` per (participant, modality).
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, TextIO, Union

import numpy as np

from .errors import InvalidInputError

MODALITIES = ("accel", "wearable", "location", "screen", "battery", "app", "report")
DATASET_TAGS = ("wearable-style", "phone-style", "custom")
ACTIVITY_LEVELS = ("sedentary", "lightly", "fairly", "very")
SOCIAL_LABELS = ("alone", "with_others")
MEAL_KINDS = ("meal", "snack")

DEFAULT_VOCABULARY = {"activity_code": tuple(range(10)), "loc_code": tuple(range(10))}

_EPOCH = datetime(1970, 1, 1)
_TS_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}$")
_MAX_ID_LEN = 64


def to_seconds(ts: datetime) -> int:
    return (ts - _EPOCH) // timedelta(seconds=1)


def from_seconds(sec: int) -> datetime:
    return _EPOCH + timedelta(seconds=int(sec))


def format_timestamp(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M:%S")


def parse_timestamp(value) -> datetime:
    if not isinstance(value, str) or not _TS_RE.match(value):
        raise ValueError("invalid timestamp")
    try:
        ts = datetime.fromisoformat(value)
    except ValueError:
        raise ValueError("invalid timestamp") from None
    if not 2000 <= ts.year <= 2100:
        raise ValueError("invalid timestamp")
    return ts


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class AccelSample:
    participant_id: str
    timestamp: datetime
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class WearableMinute:
    participant_id: str
    timestamp: datetime
    steps: int
    activity_level: str


@dataclass(frozen=True)
class LocationPoint:
    participant_id: str
    timestamp: datetime
    lat: float
    lon: float


@dataclass(frozen=True)
class ScreenEvent:
    participant_id: str
    timestamp: datetime
    state: str


@dataclass(frozen=True)
class BatteryEvent:
    participant_id: str
    timestamp: datetime
    level: float
    charging: bool


@dataclass(frozen=True)
class AppEvent:
    participant_id: str
    timestamp: datetime
    app_id: str


@dataclass(frozen=True)
class EatingReport:
    participant_id: str
    timestamp: datetime
    social_context: str
    meal_kind: str
    concurrent_activity: int
    location_category: int


RawRecord = Union[AccelSample, WearableMinute, LocationPoint, ScreenEvent,
                  BatteryEvent, AppEvent, EatingReport]


def _number(obj, key, lo=-math.inf, hi=math.inf):
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"field '{key}' must be a number")
    v = float(v)
    if not math.isfinite(v) or not lo <= v <= hi:
        raise ValueError(f"field '{key}' out of range")
    return v


def _integer(obj, key, lo=None):
    v = obj.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"field '{key}' must be an integer")
    if lo is not None and v < lo:
        raise ValueError(f"field '{key}' out of range")
    return v


def _choice(obj, key, allowed):
    v = obj.get(key)
    if v not in allowed:
        raise ValueError(f"field '{key}' must be one of {', '.join(allowed)}")
    return v


def _accel(obj, pid, ts):
    return AccelSample(pid, ts, _number(obj, "x"), _number(obj, "y"), _number(obj, "z"))


def _wearable(obj, pid, ts):
    return WearableMinute(pid, ts, _integer(obj, "steps", lo=0),
                          _choice(obj, "level", ACTIVITY_LEVELS))


def _location(obj, pid, ts):
    return LocationPoint(pid, ts, _number(obj, "lat", -90.0, 90.0),
                         _number(obj, "lon", -180.0, 180.0))


def _screen(obj, pid, ts):
    return ScreenEvent(pid, ts, _choice(obj, "state", ("on", "off")))


def _battery(obj, pid, ts):
    charging = obj.get("charging")
    if not isinstance(charging, bool):
        raise ValueError("field 'charging' must be a boolean")
    return BatteryEvent(pid, ts, _number(obj, "level", 0.0, 100.0), charging)


def _app(obj, pid, ts):
    app = obj.get("app")
    if not isinstance(app, str) or not app:
        raise ValueError("field 'app' must be a non-empty string")
    return AppEvent(pid, ts, app)


def _report(obj, pid, ts):
    return EatingReport(pid, ts, _choice(obj, "social", SOCIAL_LABELS),
                        _choice(obj, "meal", MEAL_KINDS),
                        _integer(obj, "activity_code"), _integer(obj, "loc_code"))


_PARSERS = {
    "accel": _accel,
    "wearable": _wearable,
    "location": _location,
    "screen": _screen,
    "battery": _battery,
    "app": _app,
    "report": _report,
}


def check_participant_id(pid) -> str:
    if not isinstance(pid, str) or not pid or len(pid) > _MAX_ID_LEN:
        raise ValueError("invalid participant id")
    return pid


def _lines(text_source) -> Iterator[str]:
    if isinstance(text_source, str):
        yield from text_source.splitlines()
    else:
        for line in text_source:
            yield line.rstrip("\n").rstrip("\r")


def parse_stream(text_source: Union[str, TextIO, Iterable[str]], modality_kind: str,
                 *, source: str | None = None) -> list[RawRecord]:
    """Parse JSON Lines into records, failing on the first offending line.

    Blank lines are rejected like any other malformed line so that no input
    line is ever silently skipped.
    """
    try:
        parser = _PARSERS[modality_kind]
    except KeyError:
        raise InvalidInputError(f"unknown modality kind '{modality_kind}'", source=source) from None
    out = []
    for lineno, line in enumerate(_lines(text_source), start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise InvalidInputError("malformed JSON", source=source, line=lineno) from None
        if not isinstance(obj, dict):
            raise InvalidInputError("record must be a JSON object", source=source, line=lineno)
        try:
            pid = check_participant_id(obj.get("p"))
            ts = parse_timestamp(obj.get("t"))
            out.append(parser(obj, pid, ts))
        except ValueError as exc:
            raise InvalidInputError(str(exc), source=source, line=lineno) from None
    return out


# ---------------------------------------------------------------- columnar store


@dataclass(frozen=True)
class Manifest:
    participants: tuple[str, ...]
    dataset_tag: str
    vocabulary: Mapping[str, tuple[int, ...]] = field(
        default_factory=lambda: dict(DEFAULT_VOCABULARY))

    def __post_init__(self):
        if self.dataset_tag not in DATASET_TAGS:
            raise InvalidInputError(f"unknown dataset_tag '{self.dataset_tag}'")
        seen = set()
        for pid in self.participants:
            try:
                check_participant_id(pid)
            except ValueError:
                raise InvalidInputError(f"invalid participant id {pid!r} in manifest") from None
            if pid in seen:
                raise InvalidInputError(f"duplicate participant {pid} in manifest")
            seen.add(pid)
        for key in DEFAULT_VOCABULARY:
            if key not in self.vocabulary:
                raise InvalidInputError(f"manifest vocabulary lacks '{key}'")

    @classmethod
    def from_json(cls, doc: Mapping) -> "Manifest":
        if not isinstance(doc, Mapping) or "participants" not in doc:
            raise InvalidInputError("manifest must be an object with 'participants'")
        parts = doc["participants"]
        if not isinstance(parts, list):
            raise InvalidInputError("manifest 'participants' must be an array")
        vocab = dict(DEFAULT_VOCABULARY)
        for key, codes in (doc.get("vocabulary") or {}).items():
            if not isinstance(codes, list) or not all(
                    isinstance(c, int) and not isinstance(c, bool) for c in codes):
                raise InvalidInputError(f"vocabulary '{key}' must be an integer array")
            vocab[key] = tuple(codes)
        return cls(tuple(parts), doc.get("dataset_tag", "custom"), vocab)

    def to_json(self) -> dict:
        return {
            "participants": list(self.participants),
            "dataset_tag": self.dataset_tag,
            "vocabulary": {k: list(v) for k, v in sorted(self.vocabulary.items())},
        }


# column name -> numpy dtype, per modality
_COLUMNS = {
    "accel": {"x": np.float64, "y": np.float64, "z": np.float64},
    "wearable": {"steps": np.int64, "level": np.int8},
    "location": {"lat": np.float64, "lon": np.float64},
    "screen": {"on": np.bool_},
    "battery": {"level": np.float64, "charging": np.bool_},
    "app": {"app": object},
    "report": {"social": np.int8, "meal": np.int8, "activity_code": np.int64,
               "loc_code": np.int64},
}


def _record_row(kind, rec):
    if kind == "accel":
        return (rec.x, rec.y, rec.z)
    if kind == "wearable":
        return (rec.steps, ACTIVITY_LEVELS.index(rec.activity_level))
    if kind == "location":
        return (rec.lat, rec.lon)
    if kind == "screen":
        return (rec.state == "on",)
    if kind == "battery":
        return (rec.level, rec.charging)
    if kind == "app":
        return (rec.app_id,)
    return (SOCIAL_LABELS.index(rec.social_context), MEAL_KINDS.index(rec.meal_kind),
            rec.concurrent_activity, rec.location_category)


@dataclass(frozen=True)
class Stream:
    """Time-sorted columnar records of one modality for one participant.

    ``t`` holds local wall-clock seconds since 1970-01-01T00:00:00. The arrays
    are read-only.
    """

    kind: str
    t: np.ndarray
    columns: Mapping[str, np.ndarray]

    def __len__(self):
        return len(self.t)

    def __getitem__(self, name):
        return self.columns[name]

    def window(self, lo: int, hi: int, *, lo_open=False, hi_open=True) -> "Stream":
        """Sub-stream with ``lo <= t < hi`` (bounds openness configurable)."""
        a = np.searchsorted(self.t, lo, side="right" if lo_open else "left")
        b = np.searchsorted(self.t, hi, side="left" if hi_open else "right")
        return Stream(self.kind, self.t[a:b], {k: v[a:b] for k, v in self.columns.items()})

    @classmethod
    def empty(cls, kind: str) -> "Stream":
        cols = {name: np.empty(0, dtype=dt) for name, dt in _COLUMNS[kind].items()}
        return cls(kind, np.empty(0, dtype=np.int64), cols)

    @classmethod
    def from_columns(cls, kind: str, t, columns: Mapping[str, Sequence]) -> "Stream":
        """Build a stream from raw columns, stably sorted by time."""
        t = np.asarray(t, dtype=np.int64)
        order = np.argsort(t, kind="stable")
        cols = {}
        for name, dt in _COLUMNS[kind].items():
            arr = np.asarray(columns[name], dtype=dt)
            if arr.shape != t.shape:
                raise InvalidInputError(f"{kind}: column '{name}' length mismatch")
            cols[name] = arr[order]
            cols[name].flags.writeable = False
        t = t[order]
        t.flags.writeable = False
        return cls(kind, t, cols)

    def records(self, participant_id: str) -> list[RawRecord]:
        out = []
        c = self.columns
        for i, sec in enumerate(self.t):
            ts = from_seconds(sec)
            k = self.kind
            if k == "accel":
                out.append(AccelSample(participant_id, ts, float(c["x"][i]),
                                       float(c["y"][i]), float(c["z"][i])))
            elif k == "wearable":
                out.append(WearableMinute(participant_id, ts, int(c["steps"][i]),
                                          ACTIVITY_LEVELS[c["level"][i]]))
            elif k == "location":
                out.append(LocationPoint(participant_id, ts, float(c["lat"][i]),
                                         float(c["lon"][i])))
            elif k == "screen":
                out.append(ScreenEvent(participant_id, ts, "on" if c["on"][i] else "off"))
            elif k == "battery":
                out.append(BatteryEvent(participant_id, ts, float(c["level"][i]),
                                        bool(c["charging"][i])))
            elif k == "app":
                out.append(AppEvent(participant_id, ts, c["app"][i]))
            else:
                out.append(EatingReport(participant_id, ts, SOCIAL_LABELS[c["social"][i]],
                                        MEAL_KINDS[c["meal"][i]], int(c["activity_code"][i]),
                                        int(c["loc_code"][i])))
        return out

    def equals(self, other: "Stream") -> bool:
        if self.kind != other.kind or not np.array_equal(self.t, other.t):
            return False
        return all(np.array_equal(self.columns[k], other.columns[k]) for k in self.columns)


class CohortStore:
    """Per-participant, per-modality time-sorted streams plus the manifest.

    Instances are treated as immutable once built.
    """

    def __init__(self, manifest: Manifest, streams: Mapping[tuple[str, str], Stream]):
        self.manifest = manifest
        known = set(manifest.participants)
        for (pid, kind), stream in streams.items():
            if pid not in known:
                raise InvalidInputError(f"unknown participant {pid}")
            if kind not in MODALITIES:
                raise InvalidInputError(f"unknown modality kind '{kind}'")
            if len(stream.t) > 1 and np.any(np.diff(stream.t) < 0):
                raise InvalidInputError(f"stream ({pid}, {kind}) is not time-sorted")
        self._streams = {key: s for key, s in streams.items() if len(s)}

    @property
    def participants(self) -> tuple[str, ...]:
        return self.manifest.participants

    def stream(self, participant_id: str, kind: str) -> Stream:
        return self._streams.get((participant_id, kind)) or Stream.empty(kind)

    def has_modality(self, kind: str) -> bool:
        return any(k == kind for _, k in self._streams)

    def n_records(self, kind: str | None = None) -> int:
        return sum(len(s) for (_, k), s in self._streams.items() if kind is None or k == kind)

    def replace_streams(self, updates: Mapping[tuple[str, str], Stream]) -> "CohortStore":
        merged = dict(self._streams)
        merged.update(updates)
        return CohortStore(self.manifest, merged)

    def __eq__(self, other):
        if not isinstance(other, CohortStore) or self.manifest != other.manifest:
            return False
        if self._streams.keys() != other._streams.keys():
            return False
        return all(s.equals(other._streams[k]) for k, s in self._streams.items())

    __hash__ = None


def build_cohort(records_by_modality: Mapping[str, Iterable[RawRecord]],
                 manifest: Manifest) -> CohortStore:
    """Group records by participant and modality, stably sorted by timestamp."""
    known = set(manifest.participants)
    grouped: dict[tuple[str, str], tuple[list, list]] = {}
    for kind, records in records_by_modality.items():
        if kind not in _PARSERS:
            raise InvalidInputError(f"unknown modality kind '{kind}'")
        for rec in records:
            pid = rec.participant_id
            if pid not in known:
                raise InvalidInputError(f"unknown participant {pid}")
            ts, rows = grouped.setdefault((pid, kind), ([], []))
            ts.append(to_seconds(rec.timestamp))
            rows.append(_record_row(kind, rec))
    streams = {}
    for (pid, kind), (ts, rows) in grouped.items():
        names = list(_COLUMNS[kind])
        cols = {name: [r[j] for r in rows] for j, name in enumerate(names)}
        streams[(pid, kind)] = Stream.from_columns(kind, ts, cols)
    return CohortStore(manifest, streams)


# ---------------------------------------------------------------- JSON Lines I/O


def _fmt(v: float) -> str:
    return repr(float(v))


def stream_lines(pid: str, stream: Stream) -> Iterator[str]:
    """Serialize a stream back to the JSON Lines input format."""
    p = json.dumps(pid)
    c = stream.columns
    k = stream.kind
    for i, sec in enumerate(stream.t):
        head = f'{{"p": {p}, "t": "{format_timestamp(from_seconds(sec))}"'
        if k == "accel":
            body = f'"x": {_fmt(c["x"][i])}, "y": {_fmt(c["y"][i])}, "z": {_fmt(c["z"][i])}'
        elif k == "wearable":
            body = f'"steps": {int(c["steps"][i])}, "level": "{ACTIVITY_LEVELS[c["level"][i]]}"'
        elif k == "location":
            body = f'"lat": {_fmt(c["lat"][i])}, "lon": {_fmt(c["lon"][i])}'
        elif k == "screen":
            body = f'"state": "{"on" if c["on"][i] else "off"}"'
        elif k == "battery":
            body = (f'"level": {_fmt(c["level"][i])}, '
                    f'"charging": {"true" if c["charging"][i] else "false"}')
        elif k == "app":
            body = f'"app": {json.dumps(c["app"][i])}'
        else:
            body = (f'"social": "{SOCIAL_LABELS[c["social"][i]]}", '
                    f'"meal": "{MEAL_KINDS[c["meal"][i]]}", '
                    f'"activity_code": {int(c["activity_code"][i])}, '
                    f'"loc_code": {int(c["loc_code"][i])}')
        yield f"{head}, {body}}}"


def write_store(store: CohortStore, out_dir: Union[str, Path]) -> list[Path]:
    """Write one ``<modality>.jsonl`` per modality plus ``manifest.json``.

    All seven modality files are written, empty ones included.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind in MODALITIES:
        path = out / f"{kind}.jsonl"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for pid in store.participants:
                for line in stream_lines(pid, store.stream(pid, kind)):
                    fh.write(line)
                    fh.write("\n")
        paths.append(path)
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(store.manifest.to_json(), indent=2) + "\n",
                             encoding="utf-8")
    paths.append(manifest_path)
    return paths


def load_manifest(path: Union[str, Path]) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed JSON ({exc.msg})", source=str(path)) from None
    return Manifest.from_json(doc)


def load_cohort(data_dir: Union[str, Path]) -> CohortStore:
    """Read ``manifest.json`` and every ``<modality>.jsonl`` present in a directory."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.is_file():
        raise InvalidInputError("manifest.json not found", source=str(data_dir))
    manifest = load_manifest(manifest_path)
    records = {}
    for kind in MODALITIES:
        path = data_dir / f"{kind}.jsonl"
        if path.is_file():
            with open(path, encoding="utf-8") as fh:
                records[kind] = parse_stream(fh, kind, source=str(path))
    if "report" not in records:
        raise InvalidInputError("report.jsonl not found", source=str(data_dir))
    return build_cohort(records, manifest)
