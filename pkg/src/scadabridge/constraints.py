"""Calibration-agnostic relative-dependency (R_D) constraints.

Every constraint is a coefficient of variation (population standard
deviation over mean) of pooled benign samples, shifted by a dimensionless
adjustment: the degree of dependency for control time, a burst-dominance
term for control bursts.  Control frequency is a plain write ratio.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .dependency import DependencyGraph, build_graph, burst_sizes, control_frequency, dependent_writes

log = logging.getLogger(__name__)

SCHEMA = "bridge-constraints/1"
LAMBDA_MODES = ("rarity", "modal", "none")


class ConstraintError(ValueError):
    pass


class InsufficientData(ConstraintError):
    pass


class DegenerateData(ConstraintError):
    pass


def degree_of_dependency(graph: DependencyGraph, i: str, j: str) -> float:
    """Share of j's dependencies that come from i (epsilon)."""
    incoming = graph.incoming(j)
    total = sum(incoming.values())
    if total == 0:
        raise ConstraintError(f"no dependency observed for {j!r}")
    return incoming.get(i, 0) / total


def degree_of_dominance(bursts, s: int) -> float:
    """Fraction of bursts whose size equals ``s`` (lambda)."""
    bursts = list(bursts)
    if not bursts:
        raise ConstraintError("empty burst list")
    return sum(1 for b in bursts if b == s) / len(bursts)


def modal_size(bursts) -> int:
    counts = Counter(bursts)
    top = max(counts.values())
    return min(s for s, c in counts.items() if c == top)


def _cv_parts(samples):
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise InsufficientData(f"need at least 2 samples, got {x.size}")
    m = float(x.mean())
    if m == 0.0:
        raise DegenerateData("zero mean")
    return float(x.std()), m


def rd_delta(samples, eps: float) -> float:
    sd, m = _cv_parts(samples)
    return (sd + eps) / m


def rd_mu(bursts, lam: float) -> float:
    sd, m = _cv_parts(bursts)
    return (sd + lam) / m


def rd_freq(count: int, total: int) -> float:
    if total <= 0:
        raise ConstraintError("operation has no commands")
    if not 0 <= count <= total:
        raise ConstraintError(f"count {count} outside [0, {total}]")
    return count / total


def burst_adjustment(bursts, mode: str = "rarity") -> float:
    """The lambda fed into rd_mu.

    ``modal``: dominance of the most common burst size.  ``rarity``: one
    minus that, so a device whose bursts never vary gets no slack.
    ``none``: zero.
    """
    if mode == "none":
        return 0.0
    lam = degree_of_dominance(bursts, modal_size(bursts))
    if mode == "modal":
        return lam
    if mode == "rarity":
        return 1.0 - lam
    raise ValueError(f"unknown lambda mode {mode!r}")


@dataclass
class TimeConstraint:
    rd: float
    mean: float
    eps: float
    n: int


@dataclass
class BurstConstraint:
    rd: float
    mean: float
    lam: float
    n: int


@dataclass
class EventConstraints:
    control_time: dict = field(default_factory=dict)   # (i, j) -> TimeConstraint
    control_burst: dict = field(default_factory=dict)  # i -> BurstConstraint
    control_freq: dict = field(default_factory=dict)   # i -> float
    unmodeled: list = field(default_factory=list)      # [kind, key, reason]
    n_ops: int = 0


@dataclass
class ConstraintModel:
    events: dict = field(default_factory=dict)
    n_ops: int = 0
    epsilon: bool = True
    lambda_mode: str = "rarity"

    def time(self, event, i, j):
        ev = self.events.get(event)
        return None if ev is None else ev.control_time.get((i, j))

    def burst(self, event, i):
        ev = self.events.get(event)
        return None if ev is None else ev.control_burst.get(i)

    def freq(self, event, i):
        ev = self.events.get(event)
        return None if ev is None else ev.control_freq.get(i)

    def flat(self) -> dict:
        """``"kind|event|devices" -> R_D`` for every modeled constraint."""
        out = {}
        for k, ev in self.events.items():
            for (i, j), c in ev.control_time.items():
                out[f"time|{k}|{i}->{j}"] = c.rd
            for i, c in ev.control_burst.items():
                out[f"burst|{k}|{i}"] = c.rd
            for i, r in ev.control_freq.items():
                out[f"freq|{k}|{i}"] = r
        return out

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "provenance": {"n_ops": self.n_ops},
            "settings": {"epsilon": self.epsilon, "lambda_mode": self.lambda_mode},
            "events": {
                k: {
                    "n_ops": ev.n_ops,
                    "control_time": [
                        {"src": i, "dst": j, "rd": c.rd, "mean_interval": c.mean, "eps": c.eps, "n": c.n}
                        for (i, j), c in ev.control_time.items()],
                    "control_burst": [
                        {"device": i, "rd": c.rd, "mean_burst": c.mean, "lambda": c.lam, "n": c.n}
                        for i, c in ev.control_burst.items()],
                    "control_freq": [{"device": i, "rd": r} for i, r in ev.control_freq.items()],
                    "unmodeled": [list(u) for u in ev.unmodeled],
                }
                for k, ev in self.events.items()
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConstraintModel":
        if d.get("schema") != SCHEMA:
            raise ConstraintError(f"unsupported constraint schema {d.get('schema')!r}")
        settings = d.get("settings", {})
        m = cls(n_ops=d.get("provenance", {}).get("n_ops", 0),
                epsilon=settings.get("epsilon", True),
                lambda_mode=settings.get("lambda_mode", "rarity"))
        for k, e in d["events"].items():
            ev = EventConstraints(n_ops=e.get("n_ops", 0))
            for c in e["control_time"]:
                ev.control_time[(c["src"], c["dst"])] = TimeConstraint(c["rd"], c["mean_interval"], c["eps"], c["n"])
            for c in e["control_burst"]:
                ev.control_burst[c["device"]] = BurstConstraint(c["rd"], c["mean_burst"], c["lambda"], c["n"])
            for c in e["control_freq"]:
                ev.control_freq[c["device"]] = c["rd"]
            ev.unmodeled = [list(u) for u in e.get("unmodeled", [])]
            m.events[k] = ev
        return m

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ConstraintModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_constraint_model(ops: Iterable, epsilon: bool = True, lambda_mode: str = "rarity") -> ConstraintModel:
    """Pool features per event over training operations and derive R_D maps.

    Pairs or devices with fewer than two samples (or a zero mean) are listed
    as unmodeled and never alarm.
    """
    if lambda_mode not in LAMBDA_MODES:
        raise ValueError(f"lambda_mode must be one of {LAMBDA_MODES}")
    by_event: dict = {}
    for op in ops:
        by_event.setdefault(op.event, []).append(op)
    model = ConstraintModel(epsilon=epsilon, lambda_mode=lambda_mode)
    if not by_event:
        log.warning("no training operations; constraint model is empty")
        return model
    for event, event_ops in by_event.items():
        ev = EventConstraints(n_ops=len(event_ops))
        graph = build_graph(event_ops)
        for (i, j), edge in graph.edges.items():
            eps = degree_of_dependency(graph, i, j) if epsilon else 0.0
            try:
                rd = rd_delta(edge.intervals, eps)
            except ConstraintError as exc:
                ev.unmodeled.append(["time", f"{i}->{j}", str(exc)])
                continue
            ev.control_time[(i, j)] = TimeConstraint(rd, float(np.mean(edge.intervals)), eps, len(edge.intervals))

        pooled: dict = {}
        ratios: dict = {}
        for op in event_ops:
            for dev, sizes in burst_sizes(op).items():
                pooled.setdefault(dev, []).extend(sizes)
            for dev in control_frequency(op):
                ratios.setdefault(dev, None)
        for dev, sizes in pooled.items():
            try:
                lam = burst_adjustment(sizes, lambda_mode)
                rd = rd_mu(sizes, lam)
            except ConstraintError as exc:
                ev.unmodeled.append(["burst", dev, str(exc)])
                continue
            ev.control_burst[dev] = BurstConstraint(rd, float(np.mean(sizes)), lam, len(sizes))
        for dev in ratios:
            per_op = []
            for op in event_ops:
                if not op.commands:
                    continue
                count = control_frequency(op).get(dev, (0, len(op.commands)))[0]
                per_op.append(rd_freq(count, len(op.commands)))
            if per_op:
                ev.control_freq[dev] = math.fsum(per_op) / len(per_op)
        model.events[event] = ev
        model.n_ops += len(event_ops)
    return model


@dataclass
class DispersionReport:
    entries: dict = field(default_factory=dict)  # key -> (mean, sd)
    missing: list = field(default_factory=list)

    def sd(self, key) -> float:
        return self.entries[key][1]

    def to_dict(self) -> dict:
        return {"entries": {k: {"mean": m, "sd": s} for k, (m, s) in self.entries.items()},
                "missing": list(self.missing)}


def dispersion_across_calibrations(models) -> DispersionReport:
    models = list(models)
    if len(models) < 2:
        raise ConstraintError("need at least 2 models")
    flats = [m.flat() for m in models]
    common = set(flats[0])
    union = set(flats[0])
    for f in flats[1:]:
        common &= set(f)
        union |= set(f)
    rep = DispersionReport(missing=sorted(union - common))
    for key in sorted(common):
        vals = np.array([f[key] for f in flats])
        rep.entries[key] = (float(vals.mean()), float(vals.std()))
    return rep


def time_samples_by_pair(ops) -> dict:
    """(event, i, j) -> pooled control-time samples; convenience for reports."""
    out: dict = {}
    for op in ops:
        for d in dependent_writes(op):
            out.setdefault((op.event, d.src, d.dst), []).append(d.delta)
    return out
