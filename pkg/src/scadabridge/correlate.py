"""Inertia delay, steady-state checks, evolution windows and SCADA/process correlation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .trace import WRITE

STOP_DECAY = "STOP_DECAY"
START_SETTLE = "START_SETTLE"

CONFIRMED = "CONFIRMED"
DISCARDED_NO_EFFECT = "DISCARDED_NO_EFFECT"
DISCARDED_PRECEDING_EFFECT = "DISCARDED_PRECEDING_EFFECT"

DEFAULT_DELTA = 0.05
DEFAULT_SS_FRACTION = 0.01
DEFAULT_CAP = 6


class InertiaError(ValueError):
    pass


@dataclass(frozen=True)
class InertiaProfile:
    inertia_seconds: float
    itb: int
    method: str
    samples: int
    per_event: tuple = ()

    def to_dict(self) -> dict:
        return {"inertia_seconds": self.inertia_seconds, "itb": self.itb, "method": self.method,
                "samples": self.samples, "per_event": list(self.per_event)}

    @classmethod
    def from_dict(cls, d: dict) -> "InertiaProfile":
        return cls(float(d["inertia_seconds"]), int(d["itb"]), d.get("method", STOP_DECAY),
                   int(d.get("samples", 0)), tuple(d.get("per_event", ())))


def itb_of(inertia_seconds: float) -> int:
    return max(1, int(math.ceil(inertia_seconds - 1e-9)))


def _event_delay(t, v, t_s, t_next, delta, min_fraction):
    """Delay until |rate| falls below ``delta`` of its initial value, from a log-linear fit."""
    k0 = int(np.searchsorted(t, t_s, side="left"))
    if k0 == 0 or k0 >= len(t) - 1:
        return None
    dt = np.diff(t)
    rate = np.diff(v) / dt
    mid = 0.5 * (t[1:] + t[:-1])
    r0 = abs(rate[k0])
    jump = abs(v[k0] - v[k0 - 1])
    scale = max(np.ptp(v), 1e-12)
    if r0 <= delta * jump / dt[k0 - 1] or r0 < 1e-9 * scale:
        # the change completed inside one sample interval
        return (t[k0] - t_s) if jump > 1e-9 * scale else None
    sign = np.sign(rate[k0])
    ks = []
    for k in range(k0, len(rate)):
        if mid[k] >= t_next or np.sign(rate[k]) != sign or abs(rate[k]) < min_fraction * r0:
            break
        ks.append(k)
    if len(ks) < 2:
        return None
    slope, _ = np.polyfit(mid[ks], np.log(np.abs(rate[ks])), 1)
    if slope >= 0:
        return None
    return math.log(1.0 / delta) / -slope


def derive_inertia(ts, values, commands, stop_tag: str, scan_rate: int = 1000, method: str = STOP_DECAY,
                   delta: float = DEFAULT_DELTA, min_fraction: float = 0.2) -> InertiaProfile:
    """Average de-energize (or settle) delay of the actuated quantity after stop (or start) commands.

    ``values`` is the 1-D series of the quantity the actuator drives;
    ``commands`` the SCADA commands, of which the WRITEs on ``stop_tag``
    with value 0 (STOP_DECAY) or non-zero (START_SETTLE) are the events.
    """
    if method not in (STOP_DECAY, START_SETTLE):
        raise ValueError(f"unknown method {method!r}")
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    t = np.asarray(ts, float)
    v = np.asarray(values, float)
    writes = [c for c in commands if c.op == WRITE and c.tag == stop_tag]
    events = [c.ts / scan_rate for c in writes if (c.value == 0) == (method == STOP_DECAY)]
    all_t = sorted(c.ts / scan_rate for c in writes)
    delays = []
    for t_s in events:
        later = [x for x in all_t if x > t_s]
        t_next = later[0] if later else math.inf
        d = _event_delay(t, v, t_s, t_next, delta, min_fraction)
        if d is not None:
            delays.append(d)
    if not delays:
        raise InertiaError("cannot derive inertia: no qualifying stop/start events")
    avg = float(np.mean(delays))
    return InertiaProfile(avg, itb_of(avg), method, len(delays), tuple(float(d) for d in delays))


def steady_state(ts, values, start: float, end: Optional[float] = None, delta_ss=None,
                 fraction: float = DEFAULT_SS_FRACTION, ranges=None) -> bool:
    """True iff mean |second difference| over frames in [start, end] is below δ_ss for every tag.

    δ_ss defaults to ``fraction`` of each tag's range (``ranges``, or the
    observed range of ``values``).  Fewer than three frames is undecided: False.
    """
    t = np.asarray(ts, float)
    v = np.asarray(values, float)
    if v.ndim == 1:
        v = v[:, None]
    sel = (t >= start - 1e-9) if end is None else (t >= start - 1e-9) & (t <= end + 1e-9)
    w = v[sel]
    if w.shape[0] < 3:
        return False
    if delta_ss is None:
        rng = np.ptp(v, axis=0) if ranges is None else np.asarray(ranges, float)
        delta_ss = fraction * rng
    thr = np.broadcast_to(np.asarray(delta_ss, float), (v.shape[1],))
    d2 = np.abs(np.diff(w, n=2, axis=0)).mean(axis=0)
    return bool(np.all((d2 < thr) | (d2 == 0.0)))


@dataclass(frozen=True)
class EvolutionWindow:
    t0: float
    blocks: int
    end: float
    steady_reached: bool
    cap: int
    itb: int
    truncated: bool = False

    def to_dict(self) -> dict:
        return {"start": self.t0, "end": self.end, "blocks": self.blocks, "steady": self.steady_reached,
                "cap": self.cap, "itb": self.itb, "truncated": self.truncated}


def evolution_window(t0: float, profile: InertiaProfile, ts, values, cap: int = DEFAULT_CAP,
                     fraction: float = DEFAULT_SS_FRACTION, ranges=None) -> EvolutionWindow:
    """Grow [t0, t0 + n·itb] one ITB at a time until the trailing block is steady or n hits ``cap``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    t = np.asarray(ts, float)
    v = np.asarray(values, float)
    if v.ndim == 1:
        v = v[:, None]
    if ranges is None:
        ranges = np.ptp(v, axis=0) if len(v) else None
    itb = profile.itb
    last = t[-1] if len(t) else -math.inf
    blocks, steady, truncated = 1, False, False
    while True:
        end = t0 + blocks * itb
        if end > last + 1e-9:
            truncated = True
            break
        if steady_state(t, v, end - itb, end, fraction=fraction, ranges=ranges):
            steady = True
            break
        if blocks >= cap:
            break
        blocks += 1
    return EvolutionWindow(t0, blocks, t0 + blocks * itb, steady, cap, itb, truncated)


@dataclass
class CorrelationVerdict:
    alert: object
    verdict: str
    window: EvolutionWindow
    anomalies: list = field(default_factory=list)
    devices: tuple = ()

    def to_dict(self) -> dict:
        scada = self.alert.to_dict() if hasattr(self.alert, "to_dict") else dict(self.alert)
        return {"t0": self.window.t0, "window": self.window.to_dict(), "verdict": self.verdict,
                "scada": scada, "process": {"anomalies": [a.to_dict() for a in self.anomalies]},
                "devices": list(self.devices)}


def correlate(alerts, anomalies, profile: InertiaProfile, ts, values, scan_rate: int = 1000,
              cap: int = DEFAULT_CAP, fraction: float = DEFAULT_SS_FRACTION) -> list:
    """One verdict per SCADA alert.  Process anomalies never produce verdicts on their own."""
    anomalies = sorted(anomalies, key=lambda a: a.onset)
    v = np.asarray(values, float)
    ranges = np.ptp(v, axis=0) if v.size else None
    out = []
    for al in alerts:
        t0 = al.ts / scan_rate
        win = evolution_window(t0, profile, ts, v, cap, fraction, ranges)
        inside = [a for a in anomalies if t0 <= a.onset <= win.end]
        if inside:
            verdict, used = CONFIRMED, inside
        else:
            before = [a for a in anomalies if a.onset < t0 and a.end >= t0]
            verdict, used = (DISCARDED_PRECEDING_EFFECT, before) if before else (DISCARDED_NO_EFFECT, [])
        out.append(CorrelationVerdict(al, verdict, win, used, tuple(al.devices)))
    return out


def run_verdict(verdicts) -> str:
    """Collapse per-alert verdicts of one run: any confirmation confirms the run."""
    kinds = {v.verdict for v in verdicts}
    if CONFIRMED in kinds:
        return CONFIRMED
    if DISCARDED_PRECEDING_EFFECT in kinds:
        return DISCARDED_PRECEDING_EFFECT
    return DISCARDED_NO_EFFECT


def write_verdicts(path, verdicts) -> None:
    Path(path).write_text("".join(json.dumps(v.to_dict(), sort_keys=True) + "\n" for v in verdicts),
                          encoding="utf-8")


def read_verdicts(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
