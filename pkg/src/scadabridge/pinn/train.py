"""Training, scoring and thresholding for the PINN autoencoder."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import Hyper, PinnModel, SequenceBatch, apply_scaler

log = logging.getLogger(__name__)

THRESHOLD_PERCENTILE = 75.0


class TrainingError(RuntimeError):
    pass


class Adam:
    def __init__(self, params: dict, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def split_batch(batch: SequenceBatch, holdout: float = 0.2):
    """Contiguous split: the last ``holdout`` fraction of windows is held out."""
    n = len(batch)
    cut = max(1, min(n - 1, int(round(n * (1.0 - holdout)))))

    def part(sl):
        return SequenceBatch(batch.x[sl], batch.lo, batch.hi, batch.tags, batch.dt,
                             None if batch.end_ts is None else batch.end_ts[sl])

    return part(slice(0, cut)), part(slice(cut, n))


def train(data: SequenceBatch, hyper: Optional[Hyper] = None, omega: float = 1.0,
          val: Optional[SequenceBatch] = None) -> PinnModel:
    """Adam over seeded minibatches; θ is set from ``val`` (or ``data`` if none)."""
    hp = hyper or Hyper()
    if len(data) == 0:
        raise TrainingError("no training sequences")
    model = PinnModel(data.x.shape[2], data.seq_len, omega, hp)
    model.lo, model.hi, model.tags = data.lo, data.hi, list(data.tags)
    rng = np.random.default_rng(hp.seed)
    opt = Adam(model.params, hp.lr)
    n = len(data)
    for epoch in range(1, hp.epochs + 1):
        frac = (epoch - 1) / max(1, hp.epochs - 1)
        opt.lr = hp.lr * (hp.lr_final + (1.0 - hp.lr_final) * 0.5 * (1.0 + math.cos(math.pi * frac)))
        order = rng.permutation(n)
        sums = {"total": 0.0, "mse": 0.0, "kl": 0.0, "pde": 0.0}
        nb = 0
        for s in range(0, n, hp.batch_size):
            xb = data.x[order[s:s + hp.batch_size]]
            opt.zero_grad()
            loss, parts = model.loss(xb, rng)
            val_ = float(loss.data)
            if not np.isfinite(val_):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            sums["total"] += val_
            for k in parts:
                sums[k] += parts[k]
            nb += 1
        rec = {k: v / nb for k, v in sums.items()}
        rec["epoch"] = epoch
        model.history.append(rec)
        log.debug("epoch %d total %.6f", epoch, rec["total"])
    calibrate(model, val if val is not None else data)
    return model


def evaluate_loss(model: PinnModel, batch: SequenceBatch, gamma: Optional[float] = None) -> dict:
    """Deterministic (mean path) loss terms over the whole batch."""
    loss, parts = model.loss(batch.x, None, gamma)
    parts["total"] = float(loss.data)
    return parts


def window_errors(model: PinnModel, x: np.ndarray, chunk: int = 512) -> np.ndarray:
    out = []
    for s in range(0, x.shape[0], chunk):
        xb = x[s:s + chunk]
        rec = model.reconstruct(xb)
        out.append(((rec - xb) ** 2).mean(axis=(1, 2)))
    return np.concatenate(out) if out else np.zeros(0)


def calibrate(model: PinnModel, val: SequenceBatch, percentile: float = THRESHOLD_PERCENTILE) -> float:
    err = window_errors(model, val.x)
    model.theta = float(np.percentile(err, percentile))
    return model.theta


def score(model: PinnModel, window: np.ndarray, scaled: bool = True) -> tuple:
    """``(error, anomalous)`` for one window of ``seq_len`` frames."""
    w = np.asarray(window, float)
    if w.shape[0] != model.seq_len:
        raise ValueError(f"window length {w.shape[0]} != {model.seq_len}")
    if not scaled:
        w = apply_scaler(w, model.lo, model.hi, warn=log.warning)
    err = float(window_errors(model, w[None])[0])
    if model.theta is None:
        raise TrainingError("model has no threshold")
    return err, err > model.theta


@dataclass(frozen=True)
class ProcessAnomaly:
    onset: float     # end time of the first flagged window in the run
    end: float       # end time of the last flagged window in the run
    peak: float
    windows: int

    def to_dict(self) -> dict:
        return {"onset": self.onset, "end": self.end, "peak": self.peak, "windows": self.windows}


def score_series(model: PinnModel, ts, values):
    """Per-window ``(end_ts, error, flagged)`` over a raw series."""
    from .model import make_sequences

    b = make_sequences(values, model.seq_len, ts=ts, scaler=(model.lo, model.hi), warn=log.warning)
    err = window_errors(model, b.x)
    return b.end_ts, err, err > model.theta


def anomaly_runs(end_ts, err, flagged) -> list:
    """Collapse consecutive flagged windows into ProcessAnomaly records."""
    out = []
    i, n = 0, len(flagged)
    while i < n:
        if not flagged[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and flagged[j + 1]:
            j += 1
        out.append(ProcessAnomaly(float(end_ts[i]), float(end_ts[j]), float(np.max(err[i:j + 1])), j - i + 1))
        i = j + 1
    return out
