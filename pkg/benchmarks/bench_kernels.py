"""Time the hot kernels under numba and under the numpy fallback.

    python3 benchmarks/bench_kernels.py            # both backends, side by side
    python3 benchmarks/bench_kernels.py --single   # current backend only, JSON

The fallback is measured in a child process with SCADABRIDGE_DISABLE_NUMBA=1,
because the backend is fixed at import time.  Outputs are also compared, so a
run doubles as a cross-backend consistency check.
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

import numpy as np


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def _best(fn, repeat):
    fn()  # warm-up / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def run_single(n_cmds: int, n_seconds: int, repeat: int) -> dict:
    from scadabridge import _kernels as K

    rng = np.random.default_rng(0)
    ts = np.sort(rng.integers(0, n_cmds // 2, n_cmds)).astype(np.int64)
    is_read = rng.random(n_cmds) < 0.4
    codes = np.where(is_read, -1, rng.integers(0, 4, n_cmds)).astype(np.int64)

    n_steps = n_seconds * 10
    step = np.sort(rng.integers(0, n_steps, 4 * n_seconds // 30)).astype(np.int64)
    slot = rng.integers(0, K.N_SLOTS, step.size).astype(np.int64)
    val = np.where(slot == K.PGAIN, 1.0, rng.integers(0, 2, step.size)).astype(np.float64)
    tau = np.full(3, 4.7 / np.log(20.0))

    res = {"backend": K.backend()}
    t, out = _best(lambda: K.last_read_before(ts, is_read), repeat)
    res["last_read_before"] = {"seconds": t, "digest": _digest(out)}
    t, out = _best(lambda: K.burst_runs(codes), repeat)
    res["burst_runs"] = {"seconds": t, "digest": _digest(*out)}
    t, out = _best(lambda: K.integrate_dosing(step, slot, val, n_seconds, 10, tau, 2.35, 0.15, 0.05,
                                              1.41, 117.5), repeat)
    # float paths may differ in the last ulp between backends; compare rounded
    res["integrate_dosing"] = {"seconds": t, "digest": _digest(np.round(out[0], 9))}
    return res


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--commands", type=int, default=200_000)
    ap.add_argument("--seconds", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--single", action="store_true")
    args = ap.parse_args(argv)

    if args.single:
        print(json.dumps(run_single(args.commands, args.seconds, args.repeat)))
        return 0

    base = [sys.executable, os.path.abspath(__file__), "--single", "--commands", str(args.commands),
            "--seconds", str(args.seconds), "--repeat", str(args.repeat)]
    results = {}
    for flag in ("0", "1"):
        env = dict(os.environ, SCADABRIDGE_DISABLE_NUMBA=flag)
        out = subprocess.run(base, env=env, check=True, capture_output=True, text=True).stdout
        r = json.loads(out.strip().splitlines()[-1])
        results[r["backend"]] = r

    if "numba" not in results:
        print("numba unavailable; only the numpy backend was measured")
    names = ("last_read_before", "burst_runs", "integrate_dosing")
    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  outputs")
    ok = True
    for k in names:
        nb = results.get("numba", {}).get(k)
        npy = results["numpy"][k]
        if nb is None:
            print(f"{k:<18} {'-':>10} {npy['seconds'] * 1e3:10.2f}")
            continue
        same = nb["digest"] == npy["digest"]
        ok &= same
        print(f"{k:<18} {nb['seconds'] * 1e3:10.2f} {npy['seconds'] * 1e3:10.2f} "
              f"{npy['seconds'] / nb['seconds']:7.1f}x  {'match' if same else 'DIFFER'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
