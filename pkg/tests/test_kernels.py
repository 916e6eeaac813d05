import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scadabridge import _kernels as K


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.booleans()), max_size=60))
def test_last_read_paths_agree(rows):
    ts = np.cumsum([d for d, _ in rows]).astype(np.int64)
    is_read = np.array([r for _, r in rows], dtype=bool)
    loop = K._last_read_loop(ts, is_read)
    vec = K._last_read_numpy(ts, is_read)
    np.testing.assert_array_equal(loop, vec)
    np.testing.assert_array_equal(K.last_read_before(ts, is_read), loop)
    for i in range(len(ts)):
        cands = [j for j in range(len(ts)) if is_read[j] and ts[j] < ts[i]]
        assert loop[i] == (max(cands) if cands else -1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-1, 3), max_size=60))
def test_burst_paths_agree(codes):
    c = np.array(codes, dtype=np.int64)
    a = K._burst_loop(c)
    b = K._burst_numpy(c)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert int(a[1].sum()) == int((c >= 0).sum())


def test_integrators_agree():
    rng = np.random.default_rng(0)
    step = np.sort(rng.integers(0, 3000, 60)).astype(np.int64)
    slot = rng.integers(0, K.N_SLOTS, 60).astype(np.int64)
    val = np.where(slot == K.PGAIN, 2.0, rng.integers(0, 2, 60)).astype(float)
    tau = np.full(3, 1.6)
    args = (step, slot, val, 300, 10, tau, 2.35, 0.15, 0.05, 1.41, 117.5)
    a, da = K.integrate_dosing(*args)
    b, db = K._integrate_dosing_py(*args)
    assert da == db
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)
    c1 = K.integrate_conveyor(step, slot % 3, val, 300, 10, tau[:2], 3.0)
    c2 = K._integrate_conveyor_py(step, slot % 3, val, 300, 10, tau[:2], 3.0)
    np.testing.assert_allclose(c1, c2, rtol=1e-12, atol=1e-14)


def test_env_flag_selects_numpy():
    env = dict(os.environ, SCADABRIDGE_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import scadabridge; print(scadabridge.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


@pytest.mark.slow
def test_simulation_identical_across_backends(tmp_path):
    code = ("import sys, numpy as np\n"
            "from scadabridge.sim import ScenarioConfig, simulate\n"
            "r = simulate(ScenarioConfig(seed=4, n_ops=3))\n"
            "np.save(sys.argv[1], r.clean)\n")
    for flag in ("0", "1"):
        env = dict(os.environ, SCADABRIDGE_DISABLE_NUMBA=flag)
        subprocess.run([sys.executable, "-c", code, str(tmp_path / f"{flag}.npy")], env=env, check=True)
    np.testing.assert_allclose(np.load(tmp_path / "0.npy"), np.load(tmp_path / "1.npy"), rtol=1e-12, atol=1e-14)
