"""SCADA execution traces (JSON Lines) and process time series (CSV)."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

log = logging.getLogger(__name__)

READ = "READ"
WRITE = "WRITE"
DEFAULT_SCAN_RATE = 1000
PREAMBLE = "preamble"


class TraceError(ValueError):
    """Malformed trace or series input."""


class ParseError(TraceError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class OrderingError(TraceError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class Command:
    ts: int
    op: str
    tag: str
    value: float
    event: Optional[str] = None
    session: Optional[str] = None

    def __post_init__(self):
        if self.ts < 0:
            raise TraceError(f"negative ts {self.ts}")
        if not self.tag:
            raise TraceError("empty tag")
        if self.op not in (READ, WRITE):
            raise TraceError(f"op must be READ or WRITE, got {self.op!r}")

    @property
    def is_write(self) -> bool:
        return self.op == WRITE

    def to_dict(self) -> dict:
        d = {"ts": self.ts, "op": self.op, "tag": self.tag, "value": self.value}
        if self.event is not None:
            d["event"] = self.event
        if self.session is not None:
            d["session"] = self.session
        return d


@dataclass(frozen=True)
class EventSet:
    """The event set V: event tag -> trigger state (e.g. ``"Valve.0.open"``)."""

    triggers: dict = field(default_factory=dict)

    @property
    def events(self) -> list:
        return list(self.triggers)

    def __contains__(self, event) -> bool:
        return event in self.triggers

    @classmethod
    def from_events(cls, events: Iterable[str]) -> "EventSet":
        out = {}
        for e in events:
            if e in out:
                raise TraceError(f"duplicate event tag {e!r}")
            out[e] = e
        return cls(out)

    @classmethod
    def from_commands(cls, commands: Iterable[Command]) -> "EventSet":
        seen = {}
        for c in commands:
            if c.event is not None and c.event not in seen:
                seen[c.event] = c.tag
        return cls(seen)


@dataclass(frozen=True)
class ProcessControlOperation:
    """Commands a SCADA host issued while handling one occurrence of an event.

    ``trigger`` is the marker record that opened the operation (the READ of
    the event-trigger state); it is kept apart from ``commands`` and is not
    counted in the operation size.
    """

    event: str
    commands: tuple
    trigger: Optional[Command] = None
    session: Optional[str] = None

    def __len__(self) -> int:
        return len(self.commands)

    @property
    def start_ts(self) -> int:
        if self.trigger is not None:
            return self.trigger.ts
        return self.commands[0].ts if self.commands else 0


@dataclass(frozen=True)
class TraceHeader:
    scan_cycles_per_second: int = DEFAULT_SCAN_RATE


@dataclass(frozen=True)
class SeriesFrame:
    ts: float
    values: dict


# ---------------------------------------------------------------- trace JSONL


def _command_from_obj(obj: dict, line: int) -> Command:
    try:
        ts = obj["ts"]
        op = obj["op"]
        tag = obj["tag"]
        value = obj["value"]
    except KeyError as exc:
        raise ParseError(line, f"missing field {exc.args[0]!r}") from None
    if isinstance(ts, bool) or not isinstance(ts, (int, float)) or ts != int(ts):
        raise ParseError(line, f"ts must be an integer scan cycle, got {ts!r}")
    if isinstance(value, bool):
        value = float(value)
    if not isinstance(value, (int, float)):
        raise ParseError(line, f"value must be numeric, got {value!r}")
    event = obj.get("event")
    session = obj.get("session")
    try:
        return Command(int(ts), str(op), str(tag), float(value),
                       None if event is None else str(event),
                       None if session is None else str(session))
    except TraceError as exc:
        raise ParseError(line, str(exc)) from None


def iter_trace(lines: Iterable[str], header: Optional[dict] = None) -> Iterator[Command]:
    """Parse JSONL lines lazily.  A ``{"header": {...}}`` record is stored into ``header``."""
    prev_ts = None
    for n, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(n, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(n, "expected a JSON object")
        if "header" in obj:
            if header is not None:
                header.update(obj["header"])
            continue
        cmd = _command_from_obj(obj, n)
        if prev_ts is not None and cmd.ts < prev_ts:
            raise OrderingError(n, f"ts {cmd.ts} decreases (previous {prev_ts})")
        prev_ts = cmd.ts
        yield cmd


def parse_trace(path, header: Optional[dict] = None) -> list:
    """Read a JSONL trace into a list of Command, in file order."""
    with open(path, encoding="utf-8") as fh:
        return list(iter_trace(fh, header))


def read_trace_header(path) -> TraceHeader:
    hdr: dict = {}
    parse_trace(path, hdr)
    return TraceHeader(int(hdr.get("scan_cycles_per_second", DEFAULT_SCAN_RATE)))


def format_trace(commands: Iterable[Command], scan_cycles_per_second: Optional[int] = None) -> str:
    out = []
    if scan_cycles_per_second is not None:
        out.append(json.dumps({"header": {"scan_cycles_per_second": int(scan_cycles_per_second)}}))
    for c in commands:
        out.append(json.dumps(c.to_dict(), sort_keys=True))
    return "\n".join(out) + ("\n" if out else "")


def write_trace(path, commands: Iterable[Command], scan_cycles_per_second: Optional[int] = None) -> None:
    Path(path).write_text(format_trace(commands, scan_cycles_per_second), encoding="utf-8")


# ------------------------------------------------------------ segmentation


def segment_operations(commands, events: Optional[EventSet] = None) -> list:
    """Partition a trace into process-control operations.

    A command carrying an event tag opens a new operation unless it repeats
    the (event, session) pair of the operation already open, in which case
    it simply belongs to it.  Commands seen before any marker form a
    synthetic ``preamble`` operation.  When ``events`` is given, markers for
    events outside the set are treated as ordinary commands.
    """
    ops = []
    cur_event = None
    cur_session = None
    cur_trigger = None
    cur: list = []
    saw_marker = False

    def close():
        if cur_event is None and not cur:
            return
        ops.append(ProcessControlOperation(cur_event or PREAMBLE, tuple(cur), cur_trigger, cur_session))

    for c in commands:
        marker = c.event is not None and (events is None or c.event in events)
        if marker and not (cur_event == c.event and cur_session == c.session):
            close()
            cur_event, cur_session, cur_trigger, cur = c.event, c.session, c, []
            saw_marker = True
            continue
        cur.append(c)
    close()
    if not saw_marker and ops:
        log.warning("trace has no event markers; all %d commands form one preamble operation",
                    len(ops[0].commands))
    return ops


def flatten_operations(ops) -> list:
    out = []
    for op in ops:
        if op.trigger is not None:
            out.append(op.trigger)
        out.extend(op.commands)
    return out


# ----------------------------------------------------------------- series CSV


def parse_series(path) -> list:
    """Read a CSV with header ``ts,<tag1>,...`` into SeriesFrames."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        header = [h.strip() for h in header]
        if not header or header[0] != "ts":
            raise ParseError(1, "series header must start with 'ts'")
        tags = header[1:]
        if len(set(tags)) != len(tags):
            raise ParseError(1, "duplicate column names")
        frames = []
        prev = None
        for n, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != len(header):
                raise ParseError(n, f"expected {len(header)} fields, got {len(row)}")
            try:
                nums = [float(x) for x in row]
            except ValueError:
                raise ParseError(n, "non-numeric field") from None
            ts = nums[0]
            if ts < 0 or not math.isfinite(ts):
                raise ParseError(n, f"bad ts {row[0]!r}")
            if prev is not None and ts <= prev:
                raise OrderingError(n, f"ts {ts} not strictly increasing (previous {prev})")
            prev = ts
            frames.append(SeriesFrame(ts, dict(zip(tags, nums[1:]))))
        return frames


def write_series(path, frames, tags=None) -> None:
    frames = list(frames)
    if tags is None:
        tags = list(frames[0].values) if frames else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["ts", *tags])
        for f in frames:
            w.writerow([_fmt(f.ts), *(_fmt(f.values[t]) for t in tags)])


def _fmt(x: float) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x)) if abs(x) < 1e15 else repr(float(x))


def series_to_arrays(frames):
    """Return ``(ts, tags, values)`` with ``values`` shaped ``[n_frames, n_tags]``."""
    import numpy as np

    if not frames:
        return np.zeros(0), [], np.zeros((0, 0))
    tags = list(frames[0].values)
    ts = np.array([f.ts for f in frames], dtype=float)
    vals = np.array([[f.values[t] for t in tags] for f in frames], dtype=float)
    return ts, tags, vals


def arrays_to_series(ts, tags, values) -> list:
    return [SeriesFrame(float(t), {tag: float(v) for tag, v in zip(tags, row)})
            for t, row in zip(ts, values)]
