"""Trace and summary files: writing, reading and the run summary itself.

The summary is always computed from the event list, so a run and a replay
of its trace go through the same code path.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

TRACE_SCHEMA = "balloonpop.trace/1.0"
SUMMARY_SCHEMA = "balloonpop.summary/1.0"
HEIGHT_SCHEMA = "balloonpop.height/1.0"
PATH_SCHEMA = "balloonpop.path/1.0"
COMPARE_SCHEMA = "balloonpop.compare/1.0"

HEIGHT_COLUMNS = ("t", "laser", "baro", "estimate", "mode", "valid", "true_z")
PATH_COLUMNS = ("t", "x", "y", "mode")
EVENT_TYPES = ("detections", "hypotheses", "pop_assumed", "mode", "geofence_violation", "state", "pop", "end")

# hypotheses farther than this from every balloon are not attributed to one
ASSOC_RADIUS = 5.0


class TraceError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass
class RunSummary:
    pop_times: list = field(default_factory=list)  # (balloon id, t), increasing t
    total_duration: float = 0.0
    reattempts: int = 0
    attempts: int = 0
    geofence_violations: int = 0
    distance_flown: float = 0.0
    n_balloons: int = 0
    end_reason: str = ""
    confirmed_per_balloon: float = 0.0
    hypotheses_per_balloon: float = 0.0
    max_confirmed_per_balloon: int = 0

    @property
    def popped(self) -> int:
        return len(self.pop_times)

    @property
    def all_popped(self) -> bool:
        return self.n_balloons > 0 and self.popped == self.n_balloons

    def rows(self):
        out = [("pop", str(uid), repr(float(t))) for uid, t in self.pop_times]
        out += [
            ("total", "n_balloons", str(self.n_balloons)),
            ("total", "popped", str(self.popped)),
            ("total", "duration", repr(float(self.total_duration))),
            ("total", "attempts", str(self.attempts)),
            ("total", "reattempts", str(self.reattempts)),
            ("total", "geofence_violations", str(self.geofence_violations)),
            ("total", "distance_flown", repr(float(self.distance_flown))),
            ("total", "confirmed_per_balloon", repr(float(self.confirmed_per_balloon))),
            ("total", "max_confirmed_per_balloon", str(self.max_confirmed_per_balloon)),
            ("total", "hypotheses_per_balloon", repr(float(self.hypotheses_per_balloon))),
            ("total", "end_reason", self.end_reason),
        ]
        return out


def _hypothesis_counts(balloons, events, confirm_count: int):
    """Per-balloon counts of simultaneously attributed hypotheses.

    Each hypothesis snapshot attributes every hypothesis to the nearest
    balloon within ``ASSOC_RADIUS``. For each balloon this returns the median
    count over the snapshots in which it has at least one hypothesis (all,
    then confirmed only), and the peak confirmed count. Medians ignore the
    brief duplicates that exist between a new detection and the next merge.
    """
    centers = [(b["center"][0], b["center"][1]) for b in balloons]
    seen_all = [[] for _ in centers]
    seen_conf = [[] for _ in centers]
    for ev in events:
        if ev["type"] != "hypotheses" or not centers:
            continue
        n_all = [0] * len(centers)
        n_conf = [0] * len(centers)
        for h in ev["h"]:
            d = [math.hypot(h[0] - cx, h[1] - cy) for cx, cy in centers]
            i = min(range(len(d)), key=d.__getitem__)
            if d[i] > ASSOC_RADIUS:
                continue
            n_all[i] += 1
            if h[3] >= confirm_count:
                n_conf[i] += 1
        for i in range(len(centers)):
            if n_all[i]:
                seen_all[i].append(n_all[i])
            if n_conf[i]:
                seen_conf[i].append(n_conf[i])
    med_all = [statistics.median(c) for c in seen_all if c]
    med_conf = [statistics.median(c) for c in seen_conf if c]
    peak_conf = max((max(c) for c in seen_conf if c), default=0)
    return med_all, med_conf, peak_conf


def attempt_balloons(events):
    """True balloon id (or None) for every pop attempt, in order.

    An attempt is attributed through the target estimate it ended with,
    which is more accurate than the estimate it started from.
    """
    out = []
    in_pop, start_b = False, None
    for ev in events:
        if ev["type"] != "mode":
            continue
        if ev["mode_from"] == "POP" and in_pop:
            b = ev.get("balloon")
            out.append(b if b is not None else start_b)
            in_pop = False
        if ev["mode_to"] == "POP":
            in_pop, start_b = True, ev.get("balloon")
    if in_pop:
        out.append(start_b)
    return out


def pop_intervals(events):
    """Gaps between consecutive pops, each with a flag for an intervening SEARCH."""
    pops = [ev["t"] for ev in events if ev["type"] == "pop"]
    searches = [ev["t"] for ev in events if ev["type"] == "mode" and ev["mode_to"] == "SEARCH"]
    return [(b - a, any(a < t < b for t in searches)) for a, b in zip(pops, pops[1:])]


def summarize(header: dict, events: list) -> RunSummary:
    s = RunSummary(n_balloons=len(header["balloons"]))
    pops = sorted((ev["t"], ev["balloon"]) for ev in events if ev["type"] == "pop")
    s.pop_times = [(uid, t) for t, uid in pops]
    end = [ev for ev in events if ev["type"] == "end"]
    s.end_reason = end[-1]["reason"] if end else "incomplete"
    end_t = end[-1]["t"] if end else (events[-1]["t"] if events else 0.0)
    s.total_duration = pops[-1][0] if (pops and len(pops) == s.n_balloons) else end_t

    per_balloon: dict = {}
    for b in attempt_balloons(events):
        s.attempts += 1
        if b is not None:
            per_balloon[b] = per_balloon.get(b, 0) + 1
    s.reattempts = sum(n - 1 for n in per_balloon.values())
    s.geofence_violations = sum(1 for ev in events if ev["type"] == "geofence_violation")

    prev = None
    dist = 0.0
    for ev in events:
        if ev["type"] == "state":
            if prev is not None:
                dist += math.dist(prev, ev["p"])
            prev = ev["p"]
    s.distance_flown = dist

    med_all, med_conf, peak_conf = _hypothesis_counts(header["balloons"], events, header.get("confirm_count", 8))
    if med_all:
        s.hypotheses_per_balloon = sum(med_all) / len(med_all)
    if med_conf:
        s.confirmed_per_balloon = sum(med_conf) / len(med_conf)
    s.max_confirmed_per_balloon = peak_conf
    return s


# -- serialization -----------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trace_text(header: dict, events: list) -> str:
    lines = [_dumps(header)] + [_dumps(ev) for ev in events]
    return "\n".join(lines) + "\n"


def csv_text(schema: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    return buf.getvalue()


def _cell(x):
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    if x is None:
        return ""
    return str(x)


def summary_text(s: RunSummary) -> str:
    return csv_text(SUMMARY_SCHEMA, ("kind", "key", "value"), s.rows())


def height_text(rows) -> str:
    return csv_text(HEIGHT_SCHEMA, HEIGHT_COLUMNS, rows)


def path_text(rows) -> str:
    return csv_text(PATH_SCHEMA, PATH_COLUMNS, rows)


def write_run(out_dir, trace) -> RunSummary:
    """Write trace.jsonl, summary.csv, height.csv and path.csv; return the summary."""
    out = Path(out_dir)
    s = summarize(trace.header, trace.events)
    atomic_write_text(out / "trace.jsonl", trace_text(trace.header, trace.events))
    atomic_write_text(out / "height.csv", height_text(trace.height_rows))
    atomic_write_text(out / "path.csv", path_text(trace.path_rows))
    # summary last: its presence marks a finished run
    atomic_write_text(out / "summary.csv", summary_text(s))
    return s


def _schema_ok(found: str, expected: str) -> bool:
    name, _, ver = expected.partition("/")
    fname, _, fver = str(found).partition("/")
    return fname == name and fver.split(".")[0] == ver.split(".")[0]


def read_trace(path):
    """Parse a trace file; raises :class:`TraceError` naming the bad line."""
    header = None
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            if not line.endswith("\n"):
                raise TraceError(no, "truncated line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "type" not in obj:
                raise TraceError(no, "event without a type")
            if no == 1:
                if obj["type"] != "header" or not _schema_ok(obj.get("schema", ""), TRACE_SCHEMA):
                    raise TraceError(no, f"unsupported trace schema {obj.get('schema')!r}")
                header = obj
                continue
            if obj["type"] not in EVENT_TYPES or not isinstance(obj.get("t"), (int, float)):
                raise TraceError(no, f"malformed event {obj.get('type')!r}")
            events.append(obj)
    if header is None:
        raise TraceError(1, "empty trace")
    if not events or events[-1]["type"] != "end":
        raise TraceError(len(events) + 1, "trace ends without an end event")
    return header, events


def read_summary_rows(path):
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# schema: ") or not _schema_ok(first[10:].strip(), SUMMARY_SCHEMA):
            raise ValueError("unsupported summary schema")
        rows = list(csv.reader(fh))
    return [tuple(r) for r in rows[1:]]
