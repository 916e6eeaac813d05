"""Small constructors shared by the test modules."""

import math

import numpy as np

from scadabridge.trace import READ, WRITE, Command, ProcessControlOperation


def R(ts, tag, value=0.0, **kw):
    return Command(ts, READ, tag, value, **kw)


def W(ts, tag, value=1.0, **kw):
    return Command(ts, WRITE, tag, value, **kw)


def make_op(*cmds, event="ev"):
    return ProcessControlOperation(event, tuple(cmds))


def numeric_grad(f, arr, h=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every element of ``arr`` (mutated in place, restored)."""

    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def pinn_gradcheck(model, x, seed=0, h=1e-6):
    """{parameter name: relative error ||auto - numeric|| / max(||auto||, ||numeric||)}."""

    def loss_value():
        return float(model.loss(x, np.random.default_rng(seed))[0].data)

    for p in model.params.values():
        p.grad = None
    loss, _ = model.loss(x, np.random.default_rng(seed))
    loss.backward()
    out = {}
    for name, p in model.params.items():
        auto = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        num = numeric_grad(loss_value, p.data, h)
        scale = max(np.linalg.norm(auto), np.linalg.norm(num), 1e-12)
        out[name] = float(np.linalg.norm(auto - num) / scale)
    return out


def lag_trace(tau, hz, stops=(10.0, 40.0), n_seconds=70):
    """Quantity driven to 1 at t=0 and to 0 at each stop, restarted 15 s later (first-order lag)."""
    t = np.arange(0, n_seconds, 1.0 / hz)
    cmds, events = [], []
    for s in stops:
        events += [(s, 0.0), (s + 15.0, 1.0)]
    v = np.zeros_like(t)
    x, target, k = 0.0, 1.0, 0
    for i in range(1, len(t)):
        while k < len(events) and events[k][0] <= t[i - 1] + 1e-12:
            target = events[k][1]
            k += 1
        x = target + (x - target) * math.exp(-(t[i] - t[i - 1]) / tau)
        v[i] = x
    for s, val in events:
        cmds.append(W(int(round(s * 1000)), "V", val))
    return t, v, cmds
