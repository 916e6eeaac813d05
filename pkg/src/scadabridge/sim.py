"""Inertial plant simulator, SCADA event-handler emulator and attack injector.

Two scenarios ship: ``dosing`` (chemical dosing tank with a proportional
intake loop) and ``conveyor`` (belt line with a diverter).  The SCADA side is
a timer-driven event handler, so command timing scales with the setpoint
while the command structure stays fixed.  Physics runs at 1 Hz output with
fixed Euler substeps; actuators follow a first-order lag.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .trace import READ, WRITE, Command, arrays_to_series, segment_operations, write_series, write_trace

OLDSMAR = "OLDSMAR"
STEALTH_INCREMENT = "STEALTH_INCREMENT"
TOGGLE = "TOGGLE"
MIMICRY = "MIMICRY"
CATEGORIES = (OLDSMAR, STEALTH_INCREMENT, TOGGLE, MIMICRY)

LN20 = math.log(20.0)


class ConfigError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


DOSING_DEVICES = {
    "L.Meter.0": "sensor",
    "F.Meter.0": "sensor",
    "F.Meter.2": "sensor",
    "Valve.0": "valve",
    "Valve.1": "valve",
    "Valve.2": "valve",
    "Pump.0": "pump",
    "P.0": "param",
}

CONVEYOR_DEVICES = {
    "PE.0": "sensor",
    "S.Meter.0": "sensor",
    "D.Meter.0": "sensor",
    "Motor.0": "pump",
    "Diverter.0": "valve",
    "Gain.0": "param",
}

# process columns the PINN learns, and the (quantity, actuator) pair the inertia is derived from
SENSOR_TAGS = {"dosing": ("L.Meter.0", "F.Meter.0", "F.Meter.2"), "conveyor": ("S.Meter.0", "D.Meter.0")}
INERTIA_SOURCE = {"dosing": ("F.Meter.2", "Valve.2"), "conveyor": ("S.Meter.0", "Motor.0")}


@dataclass
class ScenarioConfig:
    scenario: str = "dosing"
    setpoint: float = 2.35
    gain: float = 1.0
    inertia_seconds: float = 4.7      # time for an actuator to settle within 5%
    tau: Optional[dict] = None        # per-actuator lag override, seconds
    noise: float = 0.01               # peak-to-peak, fraction of the tag range
    scan_cycles_per_second: int = 1000
    duration: Optional[float] = None  # seconds; None sizes the run for n_ops operations
    n_ops: int = 4
    seed: int = 0
    substeps: int = 10
    start_seconds: float = 2.0
    fill_factor: float = 30.0         # dosing: fill time = fill_factor * setpoint
    dose_seconds: float = 10.0
    idle_seconds: float = 15.0
    q_in: float = 0.15
    k_out: float = 0.05
    devices: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in ("dosing", "conveyor"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if not self.devices:
            self.devices = dict(DOSING_DEVICES if self.scenario == "dosing" else CONVEYOR_DEVICES)
        if not self.setpoint > 0:
            raise ConfigError("setpoint must be > 0")
        if not self.inertia_seconds > 0:
            raise ConfigError("inertia must be > 0")
        if self.tau:
            for k, v in self.tau.items():
                if not v > 0:
                    raise ConfigError(f"tau for {k} must be > 0")
        if self.duration is not None and self.duration < 0:
            raise ConfigError("duration must be >= 0")
        if self.scan_cycles_per_second <= 0 or self.substeps <= 0:
            raise ConfigError("scan rate and substeps must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")

    @classmethod
    def preset(cls, name: str, **kw) -> "ScenarioConfig":
        if name == "dosing":
            return cls(**kw)
        if name == "conveyor":
            base = dict(scenario="conveyor", setpoint=3.0, inertia_seconds=7.0, idle_seconds=12.0,
                        fill_factor=10.0, dose_seconds=4.0)
            base.update(kw)
            return cls(**base)
        raise ConfigError(f"unknown preset {name!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)

    def tau_of(self, tag: str) -> float:
        if self.tau and tag in self.tau:
            return float(self.tau[tag])
        return self.inertia_seconds / LN20

    @property
    def cycle_ms(self) -> int:
        return self.fill_ms + self.dose_ms + int(round(self.idle_seconds * 1000))

    @property
    def fill_ms(self) -> int:
        return int(round(self.fill_factor * self.setpoint * 1000))

    @property
    def dose_ms(self) -> int:
        return int(round(self.dose_seconds * 1000))

    def run_seconds(self) -> int:
        if self.duration is not None:
            return int(math.floor(self.duration))
        return int(math.ceil(self.start_seconds + 0.5 + self.n_ops * self.cycle_ms / 1000.0))


@dataclass
class AttackSpec:
    category: str
    start: float                     # seconds; the first operation starting at or after this is attacked
    targets: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ConfigError(f"unknown attack category {self.category!r}")
        self.targets = tuple(self.targets)
        if self.start < 0:
            raise ConfigError("attack start must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        return cls(d["category"], float(d.get("start", 0.0)), tuple(d.get("targets", ())), dict(d.get("params", {})))

    @classmethod
    def load(cls, path) -> "AttackSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {"category": self.category, "start": self.start, "targets": list(self.targets), "params": self.params}


@dataclass
class SimOutput:
    commands: list
    ts: np.ndarray
    tags: list
    values: np.ndarray
    clean: np.ndarray
    labels: list
    cfg: ScenarioConfig
    attack: Optional[AttackSpec] = None

    @property
    def frames(self) -> list:
        return arrays_to_series(self.ts, self.tags, self.values)

    @property
    def operations(self) -> list:
        return segment_operations(self.commands)

    def column(self, tag: str, clean: bool = False) -> np.ndarray:
        src = self.clean if clean else self.values
        return src[:, self.tags.index(tag)]

    def sensors(self, clean: bool = False) -> np.ndarray:
        src = self.clean if clean else self.values
        return src[:, [self.tags.index(t) for t in SENSOR_TAGS[self.cfg.scenario]]]

    def save(self, outdir) -> dict:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"trace": out / "trace.jsonl", "series": out / "series.csv", "labels": out / "labels.json"}
        write_trace(paths["trace"], self.commands, self.cfg.scan_cycles_per_second)
        write_series(paths["series"], self.frames, self.tags)
        paths["labels"].write_text(json.dumps(self.labels, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return {k: str(v) for k, v in paths.items()}


# --------------------------------------------------------------- handlers


@dataclass
class _Op:
    index: int
    start: int          # trigger ts, scan cycles
    trigger: tuple      # (ts, op, tag, value, event)
    cmds: list          # (ts, op, tag, value)
    fill: int
    dose: int
    attacked: bool = False


def _dosing_steps(fill: int, dose: int, n: int = 6) -> list:
    span = fill + dose
    out = []
    for k in range(n):
        a = int(round(k * span / n)) + 100
        if fill - 80 <= a + 10 and a <= fill + 70:
            a = fill + 70
        out.append(a)
    return out


def _dosing_op(index: int, start: int, fill: int, dose: int, gain: float, gains=None) -> _Op:
    c = [
        (5, READ, "L.Meter.0", 0.0),
        (15, WRITE, "Valve.0", 1.0),
        (15, WRITE, "Pump.0", 1.0),
    ]
    for k, a in enumerate(_dosing_steps(fill, dose)):
        g = gain if gains is None else gains[k]
        c.append((a, READ, "L.Meter.0", 0.0))
        c.append((a + 10, WRITE, "P.0", float(g)))
    c += [
        (fill - 30, READ, "L.Meter.0", 0.0),
        (fill - 20, WRITE, "Pump.0", 0.0),
        (fill - 10, READ, "Valve.0", 1.0),
        (fill, WRITE, "Valve.2", 1.0),
        (fill + 10, READ, "L.Meter.0", 0.0),
        (fill + 20, WRITE, "Valve.0", 0.0),
        (fill + dose - 10, READ, "L.Meter.0", 0.0),
        (fill + dose, WRITE, "Valve.2", 0.0),
        (fill + dose + 10, READ, "Valve.2", 0.0),
    ]
    c = [(start + t, o, tag, v) for t, o, tag, v in c]
    c.sort(key=lambda x: x[0])
    return _Op(index, start, (start, READ, "Valve.0", 0.0, "Valve0.open"), c, fill, dose)


def _conveyor_op(index: int, start: int, run: int, divert: int, gain: float) -> _Op:
    c = [
        (5, READ, "S.Meter.0", 0.0),
        (15, WRITE, "Motor.0", 1.0),
        (run // 2, READ, "S.Meter.0", 0.0),
        (run // 2 + 10, WRITE, "Gain.0", float(gain)),
        (run - 10, READ, "PE.0", 1.0),
        (run, WRITE, "Diverter.0", 1.0),
        (run + divert - 10, READ, "S.Meter.0", 0.0),
        (run + divert, WRITE, "Diverter.0", 0.0),
        (run + divert + 10, READ, "S.Meter.0", 0.0),
        (run + divert + 20, WRITE, "Motor.0", 0.0),
        (run + divert + 30, READ, "PE.0", 0.0),
    ]
    c = [(start + t, o, tag, v) for t, o, tag, v in c]
    return _Op(index, start, (start, READ, "PE.0", 1.0, "PE0.detect"), c, run, divert)


def _schedule(cfg: ScenarioConfig, rng: np.random.Generator) -> list:
    rate = cfg.scan_cycles_per_second
    end = cfg.run_seconds() * rate
    scale = rate / 1000.0
    jitter = int(rng.integers(0, 200))
    start = int(round((cfg.start_seconds * 1000 + jitter) * scale))
    ops = []
    fill, dose = int(cfg.fill_ms * scale), int(cfg.dose_ms * scale)
    cycle = int(cfg.cycle_ms * scale)
    while True:
        if cfg.scenario == "dosing":
            op = _dosing_op(len(ops), start, fill, dose, cfg.gain)
        else:
            op = _conveyor_op(len(ops), start, fill, dose, cfg.gain)
        if op.cmds[-1][0] >= end:
            break
        ops.append(op)
        start += cycle
    return ops


# ---------------------------------------------------------------- attacks


def _target(spec: AttackSpec, cfg: ScenarioConfig, default: str, kinds) -> str:
    tag = spec.targets[0] if spec.targets else default
    kind = cfg.devices.get(tag)
    if kind is None:
        raise ConfigError(f"unknown target tag {tag!r}")
    if kind not in kinds:
        raise ConfigError(f"target {tag!r} is a {kind}, expected one of {kinds}")
    return tag


def _pick_op(ops: list, spec: AttackSpec, rate: int) -> _Op:
    t = spec.start * rate
    for op in ops[1:]:
        if op.start >= t:
            return op
    raise ConfigError(f"attack start {spec.start}s leaves no operation to attack (the first one is never used)")


def _oldsmar(op: _Op, cfg: ScenarioConfig, spec: AttackSpec, rate: int) -> tuple:
    if cfg.scenario != "dosing":
        raise ConfigError("OLDSMAR is defined for the dosing scenario")
    fill = int(round(float(spec.params.get("fill_seconds", 19.0)) * rate))
    high = float(spec.params.get("gain", 10.0))
    steps = _dosing_steps(fill, op.dose)
    gains = [high if a >= fill else cfg.gain for a in steps]
    new = _dosing_op(op.index, op.start, fill, op.dose, cfg.gain, gains)
    cmds = []
    for ts, o, tag, v in new.cmds:
        rel = ts - op.start
        if o == WRITE and tag == "Pump.0" and rel == fill - 20:
            v = 1.0      # pump left running into the dose
        if o == WRITE and tag == "Valve.0" and rel == fill + 20:
            v = 1.0      # intake kept open
        cmds.append((ts, o, tag, v))
    op.cmds, op.fill, op.attacked = cmds, fill, True
    return op.start + fill, op.start + fill


def _mimicry(op: _Op, cfg: ScenarioConfig, spec: AttackSpec, rate: int) -> tuple:
    if cfg.scenario != "dosing":
        raise ConfigError("MIMICRY is defined for the dosing scenario")
    f = float(spec.params.get("fraction", 0.1))
    fill, s = op.fill, op.start
    q = fill // 4
    p = [cfg.gain * (1 + f) ** (k + 1) for k in range(18)]
    it = iter(p)

    def burst(ts, n):
        return [(ts, WRITE, "P.0", next(it)) for _ in range(n)]

    c = []
    c += burst(s + 15, 2)
    c += [(s + 15, WRITE, "Valve.0", 1.0)]
    c += burst(s + 15, 3)
    c += [(s + 15, WRITE, "Pump.0", 1.0)]   # never switched off again
    c += burst(s + q, 2)
    c += [(s + 2 * q, READ, "L.Meter.0", 0.0)] + burst(s + 2 * q + 10, 3)
    c += [(s + 3 * q, READ, "L.Meter.0", 0.0)] + burst(s + 3 * q + 10, 2)
    c += [(s + fill - 10, READ, "Valve.0", 1.0)] + burst(s + fill, 3)
    c += [(s + fill, WRITE, "Valve.2", 1.0)] + burst(s + fill, 3)
    op.cmds, op.attacked = c, True
    return s + 15, s + 15


def _stealth(op: _Op, cfg: ScenarioConfig, spec: AttackSpec, rate: int) -> tuple:
    tag = _target(spec, cfg, "P.0" if cfg.scenario == "dosing" else "Gain.0", ("param",))
    f = float(spec.params.get("fraction", 0.5))
    every = int(spec.params.get("every", 1))
    if every <= 0:
        raise ConfigError("STEALTH_INCREMENT 'every' must be >= 1")
    out, first, inj, seen = [], None, 0, 0
    for ts, o, t, v in op.cmds:
        out.append((ts, o, t, v))
        if o == WRITE and t == tag:
            if seen % every == 0:
                inj += 1
                out.append((ts, WRITE, tag, float(v) * (1 + f) ** inj))
                if first is None:
                    first = ts
            seen += 1
    if first is None:
        raise ConfigError(f"operation never writes {tag!r}")
    op.cmds, op.attacked = out, True
    return first, first


def _toggle(op: _Op, cfg: ScenarioConfig, spec: AttackSpec, rate: int) -> tuple:
    tag = _target(spec, cfg, "Pump.0" if cfg.scenario == "dosing" else "Motor.0", ("pump", "valve"))
    period = float(spec.params.get("period", 8.0))
    if not period > 0:
        raise ConfigError("TOGGLE period must be > 0")
    p = int(round(period * rate))
    limit = op.start + op.fill - 80
    busy = [ts for ts, *_ in op.cmds]
    value, t, adds = 0.0, op.start + 15 + p, []
    while t < limit:
        if all(abs(t - b) > 60 for b in busy):
            adds.append((t, WRITE, tag, value))
            value = 1.0 - value
        t += p
    if not adds:
        raise ConfigError("TOGGLE period longer than the attacked operation")
    op.cmds = sorted(op.cmds + adds, key=lambda x: x[0])
    op.attacked = True
    return adds[0][0], adds[0][0]


_ATTACKS = {OLDSMAR: _oldsmar, MIMICRY: _mimicry, STEALTH_INCREMENT: _stealth, TOGGLE: _toggle}


# ---------------------------------------------------------------- physics


_DOSING_SLOTS = {"Valve.0": _kernels.V0, "Valve.1": _kernels.V1, "Valve.2": _kernels.V2,
                 "Pump.0": _kernels.PUMP, "P.0": _kernels.PGAIN}
_CONVEYOR_SLOTS = {"Motor.0": 0, "Diverter.0": 1, "Gain.0": 2}


def _physics_commands(ops: list, slots: dict, rate: int, substeps: int):
    rows = []
    for op in ops:
        for ts, o, tag, v in op.cmds:
            if o == WRITE and tag in slots:
                rows.append((-(-ts * substeps // rate), slots[tag], v))
    rows.sort(key=lambda r: r[0])
    step = np.array([r[0] for r in rows], dtype=np.int64)
    slot = np.array([r[1] for r in rows], dtype=np.int64)
    val = np.array([r[2] for r in rows], dtype=np.float64)
    return step, slot, val


def _integrate(cfg: ScenarioConfig, ops: list, n: int):
    rate = cfg.scan_cycles_per_second
    if cfg.scenario == "dosing":
        step, slot, val = _physics_commands(ops, _DOSING_SLOTS, rate, cfg.substeps)
        tau = [cfg.tau_of("Valve.0"), cfg.tau_of("Valve.1"), cfg.tau_of("Valve.2")]
        out, div = _kernels.integrate_dosing(step, slot, val, n, cfg.substeps, tau, cfg.setpoint,
                                             cfg.q_in, cfg.k_out, 0.6 * cfg.setpoint, 50.0 * cfg.setpoint)
        if div >= 0 or not np.all(np.isfinite(out)):
            raise SimulationError(f"level diverged at t={div}s (q_in={cfg.q_in}, k_out={cfg.k_out})")
        tags = ["L.Meter.0", "F.Meter.0", "F.Meter.2", "Valve.0", "Valve.1", "Valve.2", "Pump.0"]
        clean = out[:, :7].copy()
        ranges = [cfg.setpoint, cfg.q_in, cfg.k_out * cfg.setpoint]
    else:
        step, slot, val = _physics_commands(ops, _CONVEYOR_SLOTS, rate, cfg.substeps)
        tau = [cfg.tau_of("Motor.0"), cfg.tau_of("Diverter.0")]
        out = _kernels.integrate_conveyor(step, slot, val, n, cfg.substeps, tau, cfg.setpoint)
        tags = ["S.Meter.0", "D.Meter.0", "Motor.0", "Diverter.0"]
        clean = out[:, [0, 2, 3, 4]].copy()
        ranges = [cfg.setpoint, 1.0]
    return tags, clean, ranges


def simulate(cfg: ScenarioConfig, attack: Optional[AttackSpec] = None) -> SimOutput:
    """Run one scenario.  Identical (cfg, attack) give identical outputs."""
    rng = np.random.default_rng(cfg.seed)
    rate = cfg.scan_cycles_per_second
    n = cfg.run_seconds()
    ops = _schedule(cfg, rng)
    labels = []
    if attack is not None:
        op = _pick_op(ops, attack, rate)
        scada_ts, effect_ts = _ATTACKS[attack.category](op, cfg, attack, rate)
        labels.append({"category": attack.category, "op_index": op.index, "scada_ts": int(scada_ts),
                       "process_start": effect_ts / rate, "end": max(ts for ts, *_ in op.cmds) / rate})
    if n == 0:
        return SimOutput([], np.zeros(0), [], np.zeros((0, 0)), np.zeros((0, 0)), labels, cfg, attack)
    tags, clean, ranges = _integrate(cfg, ops, n)
    values = clean.copy()
    noise = rng.uniform(-0.5, 0.5, size=(n, len(ranges)))
    for k, r in enumerate(ranges):
        values[:, k] += cfg.noise * r * noise[:, k]
    values[:, :len(ranges)] = np.maximum(values[:, :len(ranges)], 0.0)
    commands = []
    for op in ops:
        ts, o, tag, v, ev = op.trigger
        commands.append(Command(ts, o, tag, v, ev, str(op.index)))
        commands.extend(Command(ts, o, tag, v) for ts, o, tag, v in op.cmds)
    return SimOutput(commands, np.arange(n, dtype=float), tags, values, clean, labels, cfg, attack)


def inject_attack(spec: AttackSpec, benign: SimOutput) -> SimOutput:
    """Replay the benign run's configuration with ``spec`` applied."""
    if benign.attack is not None:
        raise ConfigError("input run already carries an attack")
    if spec.start > benign.cfg.run_seconds():
        raise ConfigError("attack starts after the run ends")
    return simulate(benign.cfg, spec)


def sweep_setpoints(cfg: ScenarioConfig, setpoints) -> list:
    out = []
    for k, sv in enumerate(setpoints):
        if not sv > 0:
            raise ConfigError(f"setpoint must be > 0, got {sv}")
        out.append(simulate(replace(cfg, setpoint=float(sv), seed=cfg.seed + k)))
    return out


def default_attack(category: str, cfg: ScenarioConfig, op_index: int = 1) -> AttackSpec:
    """An attack aimed at operation ``op_index`` of ``cfg``'s schedule."""
    start = cfg.start_seconds + (op_index - 1) * cfg.cycle_ms / 1000.0 + 1.0 if op_index > 0 else 0.0
    return AttackSpec(category, start)
