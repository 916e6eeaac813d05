"""Hot loops: plant integration, read-before-write scan and burst runs.

Every kernel has a numba path and a pure-numpy path.  The numba path is used
when numba imports and ``SCADABRIDGE_DISABLE_NUMBA`` is unset (or ``0``).
Both paths are kept bit-compatible so tests can run against either one.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLED = os.environ.get("SCADABRIDGE_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:  # pragma: no cover - import guard
    if _DISABLED:
        raise ImportError("numba disabled by environment")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"


# actuator slots shared by the dosing kernel and sim.py
V0, V1, V2, PUMP, PGAIN = 0, 1, 2, 3, 4
N_SLOTS = 5


@njit(cache=True)
def _lag_factor(h, tau):
    # exact zero-order-hold solution of dx/dt = (c - x) / tau over one step
    return 1.0 - math.exp(-h / tau)


def _integrate_dosing_py(cmd_step, cmd_slot, cmd_val, n_seconds, substeps,
                         tau, setpoint, q_in, k_out, level0, level_max):
    h = 1.0 / substeps
    f_in = _lag_factor(h, tau[0])
    f_v1 = _lag_factor(h, tau[1])
    f_v2 = _lag_factor(h, tau[2])
    out = np.zeros((n_seconds, 8))
    cmd = np.zeros(N_SLOTS)
    cmd[PGAIN] = 1.0
    a_in = 0.0
    b1 = 0.0
    b2 = 0.0
    level = level0
    k = 0
    n_cmd = cmd_step.shape[0]
    diverged = -1
    for s in range(n_seconds):
        for sub in range(substeps):
            step = s * substeps + sub
            while k < n_cmd and cmd_step[k] <= step:
                cmd[cmd_slot[k]] = cmd_val[k]
                k += 1
            if sub == 0:
                out[s, 0] = level
                out[s, 1] = q_in * a_in
                out[s, 2] = k_out * b2 * level
                out[s, 3] = cmd[V0]
                out[s, 4] = cmd[V1]
                out[s, 5] = cmd[V2]
                out[s, 6] = cmd[PUMP]
                out[s, 7] = cmd[PGAIN]
            err = (setpoint - level) / setpoint
            u = cmd[PGAIN] * err
            if u < 0.0:
                u = 0.0
            elif u > 1.0:
                u = 1.0
            c_in = cmd[V0] * cmd[PUMP] * u
            a_in += (c_in - a_in) * f_in
            b1 += (cmd[V1] - b1) * f_v1
            b2 += (cmd[V2] - b2) * f_v2
            dl = q_in * a_in - k_out * (b1 + b2) * level
            level += h * dl
            if level < 0.0:
                level = 0.0
            if not (level <= level_max) and diverged < 0:
                diverged = s
    return out, diverged


_integrate_dosing_nb = njit(cache=True)(_integrate_dosing_py) if HAVE_NUMBA else None


def integrate_dosing(cmd_step, cmd_slot, cmd_val, n_seconds, substeps, tau,
                     setpoint, q_in, k_out, level0, level_max):
    """Integrate the dosing tank.

    Returns ``(out, diverged_at)`` where ``out`` has one row per second with
    columns level, intake flow, dose flow, Valve.0, Valve.1, Valve.2, Pump.0,
    P.0 (the last five are commanded values).  ``diverged_at`` is the first
    second the level exceeded ``level_max``, or -1.
    """
    args = (
        np.ascontiguousarray(cmd_step, dtype=np.int64),
        np.ascontiguousarray(cmd_slot, dtype=np.int64),
        np.ascontiguousarray(cmd_val, dtype=np.float64),
        int(n_seconds),
        int(substeps),
        np.ascontiguousarray(tau, dtype=np.float64),
        float(setpoint),
        float(q_in),
        float(k_out),
        float(level0),
        float(level_max),
    )
    if HAVE_NUMBA:
        return _integrate_dosing_nb(*args)
    return _integrate_dosing_py(*args)


def _integrate_conveyor_py(cmd_step, cmd_slot, cmd_val, n_seconds, substeps, tau, speed_sp):
    # slots: 0 motor enable, 1 diverter, 2 speed gain
    h = 1.0 / substeps
    f_m = _lag_factor(h, tau[0])
    f_d = _lag_factor(h, tau[1])
    out = np.zeros((n_seconds, 6))
    cmd = np.zeros(3)
    cmd[2] = 1.0
    v = 0.0
    d = 0.0
    moved = 0.0
    k = 0
    n_cmd = cmd_step.shape[0]
    for s in range(n_seconds):
        for sub in range(substeps):
            step = s * substeps + sub
            while k < n_cmd and cmd_step[k] <= step:
                cmd[cmd_slot[k]] = cmd_val[k]
                k += 1
            if sub == 0:
                out[s, 0] = v
                out[s, 1] = moved
                out[s, 2] = d
                out[s, 3] = cmd[0]
                out[s, 4] = cmd[1]
                out[s, 5] = cmd[2]
            v += (cmd[0] * cmd[2] * speed_sp - v) * f_m
            d += (cmd[1] - d) * f_d
            moved += h * v * (1.0 - d)
            if moved > 1.0e3:
                moved -= 1.0e3
    return out


_integrate_conveyor_nb = njit(cache=True)(_integrate_conveyor_py) if HAVE_NUMBA else None


def integrate_conveyor(cmd_step, cmd_slot, cmd_val, n_seconds, substeps, tau, speed_sp):
    """Integrate the conveyor line: belt speed, travelled distance, diverter position."""
    args = (
        np.ascontiguousarray(cmd_step, dtype=np.int64),
        np.ascontiguousarray(cmd_slot, dtype=np.int64),
        np.ascontiguousarray(cmd_val, dtype=np.float64),
        int(n_seconds),
        int(substeps),
        np.ascontiguousarray(tau, dtype=np.float64),
        float(speed_sp),
    )
    if HAVE_NUMBA:
        return _integrate_conveyor_nb(*args)
    return _integrate_conveyor_py(*args)


def _last_read_loop(ts, is_read):
    n = ts.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    last_read = -1
    cand = -1
    for i in range(n):
        if i > 0 and ts[i] > ts[i - 1]:
            cand = last_read
        out[i] = cand
        if is_read[i]:
            last_read = i
    return out


def _last_read_numpy(ts, is_read):
    n = ts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    idx = np.arange(n, dtype=np.int64)
    upto = np.maximum.accumulate(np.where(is_read, idx, -1))
    group_start = np.searchsorted(ts, ts, side="left")
    prev = group_start - 1
    return np.where(prev >= 0, upto[np.maximum(prev, 0)], -1).astype(np.int64)


_last_read_nb = njit(cache=True)(_last_read_loop) if HAVE_NUMBA else None


def last_read_before(ts, is_read):
    """Index of the last READ whose ts is strictly smaller than ``ts[i]``, or -1.

    ``ts`` must be non-decreasing.  Among several READs sharing the largest
    earlier timestamp, the one latest in input order wins.
    """
    ts = np.ascontiguousarray(ts, dtype=np.int64)
    is_read = np.ascontiguousarray(is_read, dtype=np.bool_)
    if HAVE_NUMBA:
        return _last_read_nb(ts, is_read)
    return _last_read_numpy(ts, is_read)


def _burst_loop(codes):
    # codes: device id for WRITEs, -1 for READs
    n = codes.shape[0]
    dev = np.empty(n, dtype=np.int64)
    length = np.empty(n, dtype=np.int64)
    end = np.empty(n, dtype=np.int64)
    m = 0
    i = 0
    while i < n:
        c = codes[i]
        if c < 0:
            i += 1
            continue
        j = i
        while j + 1 < n and codes[j + 1] == c:
            j += 1
        dev[m] = c
        length[m] = j - i + 1
        end[m] = j
        m += 1
        i = j + 1
    return dev[:m], length[:m], end[:m]


def _burst_numpy(codes):
    n = codes.shape[0]
    if n == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z.copy(), z.copy()
    is_w = codes >= 0
    starts = is_w & np.concatenate(([True], codes[1:] != codes[:-1]))
    ends = is_w & np.concatenate((codes[1:] != codes[:-1], [True]))
    s_idx = np.flatnonzero(starts)
    e_idx = np.flatnonzero(ends)
    return codes[s_idx].astype(np.int64), (e_idx - s_idx + 1).astype(np.int64), e_idx.astype(np.int64)


_burst_nb = njit(cache=True)(_burst_loop) if HAVE_NUMBA else None


def burst_runs(codes):
    """Maximal runs of consecutive WRITEs to one device.

    Returns ``(device, size, end_index)`` arrays in occurrence order.
    """
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    if HAVE_NUMBA:
        return _burst_nb(codes)
    return _burst_numpy(codes)
