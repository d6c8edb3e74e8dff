"""Small builders shared by the test modules."""
import json
from datetime import datetime, timedelta

from mealsense.ingest import Manifest, build_cohort, parse_stream

DAY = datetime(2019, 3, 4)


def at(hhmm: str, day: int = 0, sec: int = 0) -> datetime:
    h, m = map(int, hhmm.split(":"))
    return DAY + timedelta(days=day, hours=h, minutes=m, seconds=sec)


def line(pid: str, ts: datetime, **fields) -> str:
    return json.dumps({"p": pid, "t": ts.isoformat(), **fields})


def report(pid, ts, social="alone", meal="meal", activity_code=0, loc_code=0):
    return line(pid, ts, social=social, meal=meal, activity_code=activity_code,
                loc_code=loc_code)


def cohort(lines_by_kind, participants=("u1",), tag="custom", vocabulary=None):
    manifest = Manifest(tuple(participants), tag, *([vocabulary] if vocabulary else []))
    return build_cohort({k: parse_stream(v, k) for k, v in lines_by_kind.items()}, manifest)
