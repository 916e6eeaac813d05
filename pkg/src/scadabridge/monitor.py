"""Online SCADA monitor: control time, burst and frequency checks against R_D constraints.

The control-time check compares the deviation of an observed interval from
a reference mean, ``|Δ/mean - 1|``, with R_DΔ.  By default the reference is
the running mean of accepted intervals for the same (event, pair) seen in the
monitored stream, which keeps the check independent of the calibration the
constraints were trained under.  ``reference="trained"`` uses the stored
training mean instead.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .constraints import ConstraintModel
from .trace import PREAMBLE, READ, WRITE, Command, EventSet, ProcessControlOperation

log = logging.getLogger(__name__)

CONTROL_TIME = "CONTROL_TIME"
CONTROL_BURST = "CONTROL_BURST"
CONTROL_FREQ = "CONTROL_FREQ"
REFERENCES = ("observed", "trained")

_REL_GUARD = 1e-9


def _exceeds(x: float, limit: float) -> bool:
    # guard against float noise in means of identical samples
    return x > limit + _REL_GUARD * max(1.0, abs(limit))


@dataclass(frozen=True)
class ScadaAlert:
    kind: str
    event: str
    devices: tuple
    observed: float
    constraint: float
    ts: int
    ratio: Optional[float] = None
    provisional: bool = False

    def key(self) -> tuple:
        return (self.kind, self.event, self.devices, self.ts, round(self.observed, 12))

    def to_dict(self) -> dict:
        d = {"ts": self.ts, "kind": self.kind, "event": self.event, "devices": list(self.devices),
             "observed": self.observed, "constraint": self.constraint}
        if self.ratio is not None:
            d["ratio"] = self.ratio
        if self.provisional:
            d["provisional"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScadaAlert":
        return cls(d["kind"], d["event"], tuple(d["devices"]), float(d["observed"]),
                   float(d["constraint"]), int(d["ts"]), d.get("ratio"), bool(d.get("provisional", False)))


def observed_delta(ts_prev: int, ts_cur: int, mean_interval: float) -> float:
    if not mean_interval > 0:
        raise ValueError("mean interval must be positive")
    return abs(ts_prev - ts_cur) / mean_interval


def observed_mu(cur_burst: int, prev_burst: int) -> float:
    return (cur_burst - prev_burst) / ((cur_burst + prev_burst) / 2.0)


def observed_freq(count: int, total: int) -> float:
    if total <= 0:
        raise ValueError("total must be positive")
    return count / total


@dataclass
class MonitorState:
    """Cross-operation memory.

    Holds the reference interval means per (event, i, j) and the last burst
    size per (event, device), so the first burst of an operation is compared
    with the last one of the previous operation of the same event.
    """

    reference: str = "observed"
    refs: dict = field(default_factory=dict)  # (event, i, j) -> [sum, n]
    last_burst: dict = field(default_factory=dict)  # (event, tag) -> size of the latest closed burst

    def __post_init__(self):
        if self.reference not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}")


class _OperationChecker:
    """Consumes the commands of one operation and yields alerts as they become decidable."""

    def __init__(self, event: str, model: ConstraintModel, tol: float, state: MonitorState,
                 provisional: bool = False):
        self.event = event
        self.ev = model.events.get(event)
        if self.ev is None:
            log.debug("event %r not modeled; only skipping", event)
        self.tol = tol
        self.state = state
        self.provisional = provisional
        self.cmds: list = []
        self.prev_ts = None
        self.last_read = -1
        self.cand = -1
        self.last_write: dict = {}
        self.burst_tag = None
        self.burst_len = 0
        self.burst_ts = 0
        self.writes: dict = {}
        self.last_write_ts: dict = {}
        self.prov_fired: set = set()

    # -- control time
    def _time(self, w: int) -> list:
        c = self.cmds[w]
        r = self.cand
        if r < 0 or self.ev is None:
            return []
        src = self.cmds[r].tag
        prior = self.last_write.get(src)
        ref_ts = self.cmds[prior].ts if prior is not None else self.cmds[r].ts
        delta = abs(ref_ts - c.ts)
        tc = self.ev.control_time.get((src, c.tag))
        if tc is None:
            log.debug("unmodeled pair %s->%s in %r", src, c.tag, self.event)
            return []
        if self.state.reference == "trained":
            ratio = observed_delta(ref_ts, c.ts, tc.mean)
            dev = abs(ratio - 1.0)
        else:
            key = (self.event, src, c.tag)
            acc = self.state.refs.get(key)
            if acc is None or acc[1] == 0:
                self.state.refs[key] = [float(delta), 1]
                return []
            mean = acc[0] / acc[1]
            if mean <= 0:
                return []
            ratio = observed_delta(ref_ts, c.ts, mean)
            dev = abs(ratio - 1.0)
            if not _exceeds(dev, tc.rd):
                acc[0] += delta
                acc[1] += 1
        if _exceeds(dev, tc.rd * self.tol):
            return [ScadaAlert(CONTROL_TIME, self.event, (src, c.tag), dev, tc.rd, c.ts, ratio)]
        return []

    # -- control burst
    def _close_burst(self) -> list:
        tag, size, ts = self.burst_tag, self.burst_len, self.burst_ts
        self.burst_tag = None
        self.burst_len = 0
        if tag is None:
            return []
        prev = self.state.last_burst.get((self.event, tag))
        self.state.last_burst[(self.event, tag)] = size
        if prev is None or self.ev is None:
            return []
        bc = self.ev.control_burst.get(tag)
        if bc is None:
            return []
        mu = observed_mu(size, prev)
        if _exceeds(abs(mu), bc.rd * self.tol):
            return [ScadaAlert(CONTROL_BURST, self.event, (tag,), mu, bc.rd, ts)]
        return []

    def feed(self, c: Command) -> list:
        out = []
        i = len(self.cmds)
        self.cmds.append(c)
        if self.prev_ts is not None and c.ts > self.prev_ts:
            self.cand = self.last_read
        elif self.prev_ts is None:
            self.cand = -1
        self.prev_ts = c.ts
        if c.op == READ:
            out += self._close_burst()
            self.last_read = i
            return out
        if self.burst_tag is not None and self.burst_tag != c.tag:
            out += self._close_burst()
        out += self._time(i)
        self.last_write[c.tag] = i
        self.burst_tag = c.tag
        self.burst_len += 1
        self.burst_ts = c.ts
        self.writes[c.tag] = self.writes.get(c.tag, 0) + 1
        self.last_write_ts[c.tag] = c.ts
        if self.provisional and self.ev is not None and c.tag not in self.prov_fired:
            rf = self.ev.control_freq.get(c.tag)
            if rf is not None:
                f = observed_freq(self.writes[c.tag], len(self.cmds))
                if _exceeds(f, rf * self.tol):
                    self.prov_fired.add(c.tag)
                    out.append(ScadaAlert(CONTROL_FREQ, self.event, (c.tag,), f, rf, c.ts, provisional=True))
        return out

    def close(self) -> list:
        out = self._close_burst()
        if self.ev is None or not self.cmds:
            return out
        total = len(self.cmds)
        for tag, count in self.writes.items():
            rf = self.ev.control_freq.get(tag)
            if rf is None:
                continue
            f = observed_freq(count, total)
            if _exceeds(f, rf * self.tol):
                out.append(ScadaAlert(CONTROL_FREQ, self.event, (tag,), f, rf, self.last_write_ts[tag]))
        return out


def check_operation(op: ProcessControlOperation, model: ConstraintModel, tol: float = 1.0,
                    state: Optional[MonitorState] = None, reference: str = "observed") -> list:
    """Alerts for one operation.  Pass a shared ``state`` to carry reference means across calls."""
    if state is None:
        state = MonitorState(reference)
    chk = _OperationChecker(op.event, model, tol, state)
    out = []
    for c in op.commands:
        out += chk.feed(c)
    out += chk.close()
    return out


def check_trace(ops: Iterable[ProcessControlOperation], model: ConstraintModel, tol: float = 1.0,
                reference: str = "observed") -> list:
    state = MonitorState(reference)
    out = []
    for op in ops:
        out += check_operation(op, model, tol, state)
    return out


class StreamError(ValueError):
    pass


class StreamMonitor:
    """Single-writer state machine over an ordered command stream.

    Segmentation follows ``segment_operations``.  Out-of-order commands are
    recorded in ``errors`` and skipped.
    """

    def __init__(self, model: ConstraintModel, events: Optional[EventSet] = None, tol: float = 1.0,
                 reference: str = "observed", provisional: bool = False):
        self.model = model
        self.events = events
        self.tol = tol
        self.provisional = provisional
        self.state = MonitorState(reference)
        self.errors: list = []
        self._cur: Optional[_OperationChecker] = None
        self._key = None
        self._last_ts = None
        self._n = 0

    def _open(self, event, session):
        self._key = (event, session)
        self._cur = _OperationChecker(event, self.model, self.tol, self.state, self.provisional)

    def feed(self, c: Command) -> list:
        self._n += 1
        if self._last_ts is not None and c.ts < self._last_ts:
            err = StreamError(f"command {self._n}: ts {c.ts} < previous {self._last_ts}; skipped")
            log.warning("%s", err)
            self.errors.append(err)
            return []
        self._last_ts = c.ts
        out = []
        marker = c.event is not None and (self.events is None or c.event in self.events)
        if marker and self._key != (c.event, c.session):
            if self._cur is not None:
                out += self._cur.close()
            self._open(c.event, c.session)
            return out
        if self._cur is None:
            self._open(PREAMBLE, None)
        out += self._cur.feed(c)
        return out

    def finish(self) -> list:
        out = []
        if self._cur is not None:
            out = self._cur.close()
        self._cur = None
        self._key = None
        return out


def stream_monitor(commands: Iterable[Command], events: Optional[EventSet], model: ConstraintModel,
                   tol: float = 1.0, reference: str = "observed", provisional: bool = False) -> Iterator[ScadaAlert]:
    mon = StreamMonitor(model, events, tol, reference, provisional)
    for c in commands:
        yield from mon.feed(c)
    yield from mon.finish()


def write_alerts(path, alerts) -> None:
    Path(path).write_text("".join(json.dumps(a.to_dict(), sort_keys=True) + "\n" for a in alerts),
                          encoding="utf-8")


def read_alerts(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(ScadaAlert.from_dict(json.loads(line)))
    return out
