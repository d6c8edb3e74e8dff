import io
import json
from datetime import datetime

import pytest
from hypothesis import given, strategies as st

from mealsense.errors import InvalidInputError
from mealsense.ingest import (CohortStore, Manifest, WearableMinute, build_cohort,
                              load_cohort, parse_stream, parse_timestamp, write_store)


def test_wearable_line_maps_fields():
    line = '{"p":"u1","t":"2019-03-01T12:05:00","steps":42,"level":"lightly"}'
    [rec] = parse_stream(line, "wearable")
    assert rec == WearableMinute("u1", datetime(2019, 3, 1, 12, 5), 42, "lightly")


def test_bad_timestamp_reports_line():
    with pytest.raises(InvalidInputError, match="line 1: invalid timestamp"):
        parse_stream('{"p":"u1","t":"not-a-time","x":0,"y":0,"z":0}', "accel")


def test_three_lines_keep_order():
    lines = [json.dumps({"p": "u1", "t": f"2019-03-01T12:0{i}:00", "state": s})
             for i, s in enumerate(["on", "off", "on"])]
    recs = parse_stream(io.StringIO("\n".join(lines) + "\n"), "screen")
    assert [r.state for r in recs] == ["on", "off", "on"]


@pytest.mark.parametrize("line, reason", [
    ('{"p":"u1","t":"2019-03-01T12:00:00","steps":-1,"level":"very"}', "steps"),
    ('{"p":"u1","t":"2019-03-01T12:00:00","steps":1,"level":"extreme"}', "level"),
    ('{"p":"u1","t":"2019-03-01T12:00:00"}', "steps"),
    ('{"p":"","t":"2019-03-01T12:00:00","steps":1,"level":"very"}', "participant"),
    ("not json", "malformed JSON"),
    ("\n", "malformed JSON"),
])
def test_invalid_wearable_lines(line, reason):
    with pytest.raises(InvalidInputError, match=reason):
        parse_stream(line, "wearable")


def test_error_names_first_offending_line():
    good = '{"p":"u1","t":"2019-03-01T12:00:00","lat":1.0,"lon":2.0}'
    bad = '{"p":"u1","t":"2019-03-01T12:00:00","lat":91.0,"lon":2.0}'
    with pytest.raises(InvalidInputError) as info:
        parse_stream([good, good, bad, bad], "location", source="location.jsonl")
    assert info.value.line == 3
    assert str(info.value).startswith("location.jsonl: line 3:")


def test_unknown_kind():
    with pytest.raises(InvalidInputError, match="unknown modality"):
        parse_stream("", "gyroscope")


@pytest.mark.parametrize("text", ["2019-02-30T00:00:00", "2019-03-01 12:00:00",
                                  "2019-03-01T12:00:00Z", "1999-12-31T23:59:59"])
def test_timestamp_rejects(text):
    with pytest.raises(ValueError):
        parse_timestamp(text)


def _report(pid, ts, social="alone"):
    return json.dumps({"p": pid, "t": ts, "social": social, "meal": "meal",
                       "activity_code": 1, "loc_code": 0})


def test_build_cohort_sorts_per_participant():
    manifest = Manifest(("u1", "u2"), "wearable-style")
    lines = [_report("u2", "2019-03-02T08:00:00"), _report("u1", "2019-03-03T08:00:00"),
             _report("u1", "2019-03-01T08:00:00"), _report("u2", "2019-03-01T19:00:00")]
    store = build_cohort({"report": parse_stream(lines, "report")}, manifest)
    for pid in ("u1", "u2"):
        t = store.stream(pid, "report").t
        assert list(t) == sorted(t)
    assert store.n_records("report") == 4


def test_unknown_participant():
    manifest = Manifest(("u1", "u2"), "custom")
    recs = parse_stream([_report("u9", "2019-03-01T08:00:00")], "report")
    with pytest.raises(InvalidInputError, match="unknown participant u9"):
        build_cohort({"report": recs}, manifest)


def test_empty_store_keeps_participants():
    store = build_cohort({}, Manifest(("u1", "u2"), "custom"))
    assert store.participants == ("u1", "u2")
    assert store.n_records() == 0
    assert len(store.stream("u1", "accel")) == 0


def test_manifest_validation():
    with pytest.raises(InvalidInputError, match="duplicate"):
        Manifest(("u1", "u1"), "custom")
    with pytest.raises(InvalidInputError, match="dataset_tag"):
        Manifest(("u1",), "smartwatch")


def test_load_cohort_requires_manifest(tmp_path):
    with pytest.raises(InvalidInputError, match="manifest.json not found"):
        load_cohort(tmp_path)


# -- properties

_minutes = st.integers(0, 3 * 24 * 60 - 1)
_records = st.lists(st.tuples(st.sampled_from(["u1", "u2", "u3"]), _minutes,
                              st.integers(0, 200), st.sampled_from(
                                  ["sedentary", "lightly", "fairly", "very"])),
                    max_size=40)


def _wearable_lines(rows):
    out = []
    for pid, minute, steps, level in rows:
        ts = datetime(2019, 3, 1 + minute // 1440, minute % 1440 // 60, minute % 60)
        out.append(json.dumps({"p": pid, "t": ts.isoformat(), "steps": steps, "level": level}))
    return out


@given(_records, st.randoms())
def test_sort_stability_under_permutation(rows, rnd):
    # distinct timestamps per participant make the sorted order unique
    seen, unique = set(), []
    for r in rows:
        if (r[0], r[1]) not in seen:
            seen.add((r[0], r[1]))
            unique.append(r)
    manifest = Manifest(("u1", "u2", "u3"), "wearable-style")
    a = build_cohort({"wearable": parse_stream(_wearable_lines(unique), "wearable")}, manifest)
    shuffled = list(unique)
    rnd.shuffle(shuffled)
    b = build_cohort({"wearable": parse_stream(_wearable_lines(shuffled), "wearable")},
                     manifest)
    assert a == b


@given(_records)
def test_parse_totality(rows):
    lines = _wearable_lines(rows)
    assert len(parse_stream(lines, "wearable")) == len(lines)


@given(st.lists(st.tuples(st.sampled_from(["u1", "u2"]), _minutes,
                          st.floats(-89, 89), st.floats(-179, 179),
                          st.floats(-20, 20, allow_subnormal=False)), max_size=25))
def test_round_trip_through_files(rows):
    import tempfile
    manifest = Manifest(("u1", "u2"), "phone-style")
    loc, acc, rep = [], [], []
    for pid, minute, lat, lon, x in rows:
        ts = datetime(2019, 3, 1 + minute // 1440, minute % 1440 // 60, minute % 60).isoformat()
        loc.append(json.dumps({"p": pid, "t": ts, "lat": lat, "lon": lon}))
        acc.append(json.dumps({"p": pid, "t": ts, "x": x, "y": -x, "z": 0.5}))
        rep.append(_report(pid, ts, "with_others"))
    store = build_cohort({"location": parse_stream(loc, "location"),
                          "accel": parse_stream(acc, "accel"),
                          "report": parse_stream(rep, "report")}, manifest)
    with tempfile.TemporaryDirectory() as tmp:
        write_store(store, tmp)
        again = load_cohort(tmp)
    assert again == store
    assert isinstance(again, CohortStore)
