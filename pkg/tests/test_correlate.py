import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import W, lag_trace
from scadabridge.correlate import (CONFIRMED, DISCARDED_NO_EFFECT, DISCARDED_PRECEDING_EFFECT, START_SETTLE,
                                   InertiaError, InertiaProfile, correlate, derive_inertia, evolution_window,
                                   itb_of, read_verdicts, run_verdict, steady_state, write_verdicts)
from scadabridge.monitor import ScadaAlert, read_alerts
from scadabridge.pinn import ProcessAnomaly
from scadabridge.sim import ScenarioConfig, simulate
from scadabridge.trace import parse_series, series_to_arrays

FIX = Path(__file__).resolve().parents[1] / "fixtures"


@pytest.mark.parametrize("hz", [1, 10])
def test_inertia_analytic_first_order(hz):
    t, v, cmds = lag_trace(1.0, hz)
    prof = derive_inertia(t, v, cmds, "V", 1000)
    assert prof.inertia_seconds == pytest.approx(math.log(20.0), abs=0.1)
    assert prof.itb == 3 and prof.samples == 2


def test_inertia_start_settle():
    t, v, cmds = lag_trace(2.0, 10)
    prof = derive_inertia(t, v, cmds, "V", 1000, method=START_SETTLE)
    assert prof.method == START_SETTLE
    assert prof.inertia_seconds == pytest.approx(2.0 * math.log(20.0), abs=0.1)


def test_inertia_dosing_scenario():
    run = simulate(ScenarioConfig(seed=2, n_ops=4))
    prof = derive_inertia(run.ts, run.column("F.Meter.2"), run.commands, "Valve.2")
    assert prof.itb == 5
    assert prof.inertia_seconds == pytest.approx(4.7, abs=0.5)


def test_inertia_instantaneous_actuator():
    cfg = ScenarioConfig(seed=0, n_ops=3, noise=0, tau={"Valve.0": 1.5, "Valve.1": 1.5, "Valve.2": 0.01})
    run = simulate(cfg)
    assert derive_inertia(run.ts, run.column("F.Meter.2"), run.commands, "Valve.2").itb == 1


def test_inertia_without_events():
    with pytest.raises(InertiaError, match="cannot derive inertia"):
        derive_inertia(np.arange(10.0), np.zeros(10), [W(1000, "Other", 0.0)], "V")


def test_itb_floor_and_ceiling():
    assert itb_of(0.01) == 1
    assert itb_of(4.49) == 5
    assert itb_of(5.0) == 5


def test_steady_state_examples():
    t = np.arange(30.0)
    assert steady_state(t, np.full(30, 3.0), 0)
    assert steady_state(t, 2.0 * t + 1.0, 0, ranges=[1.0])
    tau = 2.0
    curve = 1.0 - np.exp(-t / tau)
    assert not steady_state(t, curve, 0, 5)
    assert steady_state(t, curve, 3 * tau + 3, 3 * tau + 8)
    assert not steady_state(t, curve, 28)


def _profile(itb=5):
    return InertiaProfile(float(itb), itb, "STOP_DECAY", 1)


def test_window_never_steady_hits_cap():
    t = np.arange(200.0)
    v = np.sin(t * 1.3)
    w = evolution_window(10.0, _profile(), t, v, cap=4)
    assert (w.blocks, w.steady_reached, w.end) == (4, False, 30.0)


def test_window_steady_from_start():
    t = np.arange(50.0)
    w = evolution_window(5.0, _profile(), t, np.ones(50))
    assert (w.blocks, w.steady_reached, w.end) == (1, True, 10.0)


def test_window_truncated_at_series_end():
    t = np.arange(12.0)
    w = evolution_window(10.0, _profile(), t, np.sin(t))
    assert w.truncated and not w.steady_reached


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 150), st.integers(1, 8), st.integers(0, 3))
def test_window_monotone_in_cap(t0, cap, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(200.0)
    v = np.cumsum(rng.normal(size=(200, 2)), axis=0)
    prev = None
    for c in range(1, cap + 1):
        w = evolution_window(float(t0), _profile(3), t, v, cap=c)
        assert w.blocks <= c and w.end == w.t0 + w.blocks * w.itb
        if prev is not None:
            assert w.end >= prev.end
        prev = w


def _fixture(name):
    d = FIX / name
    alerts = read_alerts(d / "alerts.jsonl")
    anomalies = [ProcessAnomaly(**json.loads(x)) for x in (d / "anomalies.jsonl").read_text().splitlines()]
    prof = InertiaProfile.from_dict(json.loads((d / "itb.json").read_text()))
    ts, tags, values = series_to_arrays(parse_series(d / "series.csv"))
    return alerts, anomalies, prof, ts, values


def test_oldsmar_fixture_confirmed():
    v = correlate(*_fixture("oldsmar"))
    assert [x.verdict for x in v] == [CONFIRMED]
    assert (v[0].window.t0, v[0].window.end, v[0].window.blocks) == (98.0, 103.0, 1)
    assert v[0].devices == ("Valve.0", "Valve.2")


def test_preceding_fixture_discarded():
    v = correlate(*_fixture("preceding"))
    assert [x.verdict for x in v] == [DISCARDED_PRECEDING_EFFECT]
    assert v[0].anomalies[0].onset == 88.0


def test_no_anomaly_means_no_effect():
    alerts, _, prof, ts, values = _fixture("oldsmar")
    assert [x.verdict for x in correlate(alerts, [], prof, ts, values)] == [DISCARDED_NO_EFFECT]


def test_anomalies_alone_produce_nothing():
    _, anomalies, prof, ts, values = _fixture("oldsmar")
    assert correlate([], anomalies, prof, ts, values) == []


def _random_case(rng):
    ts = np.arange(120.0)
    values = np.cumsum(rng.normal(size=(120, 2)), axis=0)
    alerts = [ScadaAlert("CONTROL_TIME", "ev", ("A", "B"), 1.0, 0.5, int(rng.integers(0, 110_000)))
              for _ in range(rng.integers(0, 5))]
    anomalies = []
    for _ in range(rng.integers(0, 5)):
        on = float(rng.integers(0, 115))
        anomalies.append(ProcessAnomaly(on, on + float(rng.integers(0, 6)), 1.0, 1))
    return alerts, anomalies, _profile(int(rng.integers(1, 7))), ts, values


@pytest.mark.parametrize("seed", range(50))
def test_verdict_invariants(seed):
    case = _random_case(np.random.default_rng(seed))
    out = correlate(*case)
    assert len(out) == len(case[0])
    for v in out:
        if v.verdict == CONFIRMED:
            assert all(v.window.t0 <= a.onset <= v.window.end for a in v.anomalies)
        if v.verdict == DISCARDED_PRECEDING_EFFECT:
            assert all(a.onset < v.window.t0 <= a.end for a in v.anomalies)
    assert [v.to_dict() for v in correlate(*case)] == [v.to_dict() for v in out]


def test_run_verdict():
    class V:
        def __init__(self, verdict):
            self.verdict = verdict

    assert run_verdict([V(DISCARDED_NO_EFFECT), V(CONFIRMED)]) == CONFIRMED
    assert run_verdict([V(DISCARDED_NO_EFFECT), V(DISCARDED_PRECEDING_EFFECT)]) == DISCARDED_PRECEDING_EFFECT
    assert run_verdict([]) == DISCARDED_NO_EFFECT


def test_verdict_io(tmp_path):
    v = correlate(*_fixture("oldsmar"))
    p = tmp_path / "v.jsonl"
    write_verdicts(p, v)
    [row] = read_verdicts(p)
    assert set(row) == {"t0", "window", "verdict", "scada", "process", "devices"}
    assert row["scada"]["devices"] == ["Valve.0", "Valve.2"]
