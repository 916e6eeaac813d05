"""Physics-informed attention autoencoder.

Encoder and decoder are stacks of ``layers`` identical blocks (multi-head
self-attention sublayer, then a feed-forward sublayer), each wrapped as
``LayerNorm(x + f(x))``.  Head count equals the sequence length (the ITB).
A variational bottleneck sits between them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LN_EPS = 1e-5
LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0


class PinnError(RuntimeError):
    pass


@dataclass
class Hyper:
    alpha: float = 1.0
    beta: float = 0.001
    gamma: float = 0.001
    lr: float = 0.003
    lr_final: float = 0.1            # cosine decay to this fraction of lr
    epochs: int = 40
    batch_size: int = 32
    seed: int = 0
    layers: Optional[int] = None   # None: one block per ITB step
    latent: Optional[int] = None   # None: max(2, features // 2)
    d_model: int = 16              # residual-stream width
    dt: float = 1.0


@dataclass
class SequenceBatch:
    x: np.ndarray            # [batch, seq_len, features], scaled to [0, 1]
    lo: np.ndarray
    hi: np.ndarray
    tags: list = field(default_factory=list)
    dt: float = 1.0
    end_ts: Optional[np.ndarray] = None  # timestamp of each window's last frame

    @property
    def seq_len(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.x.shape[0]


def fit_scaler(values: np.ndarray):
    lo = values.min(axis=0)
    hi = values.max(axis=0)
    return lo, hi


def apply_scaler(values: np.ndarray, lo, hi, warn=None) -> np.ndarray:
    span = np.where(hi > lo, hi - lo, 1.0)
    out = (values - lo) / span
    if warn is not None and (out.min() < 0.0 or out.max() > 1.0):
        warn("input outside the fitted range; clamped")
    return np.clip(out, 0.0, 1.0)


def make_sequences(values, itb: int, ts=None, scaler=None, tags=None, dt: float = 1.0, warn=None) -> SequenceBatch:
    """Sliding windows of length ``itb`` (stride 1) over ``values[n_frames, n_features]``.

    ``scaler`` is ``(lo, hi)`` from training; when omitted it is fitted here.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if itb < 2:
        raise ValueError("itb must be >= 2")
    n = values.shape[0]
    if n < itb:
        raise ValueError(f"series has {n} frames, shorter than the sequence length {itb}")
    lo, hi = scaler if scaler is not None else fit_scaler(values)
    scaled = apply_scaler(values, np.asarray(lo, float), np.asarray(hi, float), warn)
    idx = np.arange(n - itb + 1)[:, None] + np.arange(itb)[None, :]
    x = scaled[idx]
    end_ts = None if ts is None else np.asarray(ts, float)[idx[:, -1]]
    return SequenceBatch(x, np.asarray(lo, float), np.asarray(hi, float), list(tags or []), dt, end_ts)


# ------------------------------------------------------------- building blocks


def attention_rank(Q, K, V) -> Tensor:
    """SoftMax(Q Kᵀ / sqrt(d_k)) V, row-wise softmax."""
    Q, K, V = ad.as_tensor(Q), ad.as_tensor(K), ad.as_tensor(V)
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ValueError(f"attention shape mismatch Q{Q.shape} K{K.shape} V{V.shape}")
    dk = Q.shape[-1]
    if dk <= 0:
        raise ValueError("d_k must be positive")
    scores = ad.matmul(Q, ad.transpose(K)) * (1.0 / math.sqrt(dk))
    return ad.matmul(ad.softmax(scores, axis=-1), V)


def attention_filter(Q, K) -> np.ndarray:
    Q, K = np.asarray(Q, float), np.asarray(K, float)
    s = Q @ np.swapaxes(K, -1, -2) / math.sqrt(Q.shape[-1])
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x, gamma=None, beta=None, eps: float = LN_EPS) -> Tensor:
    x = ad.as_tensor(x)
    mu = ad.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ad.mean(xc * xc, axis=-1, keepdims=True)
    y = xc / ad.sqrt(var + eps)
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y


def sublayer(x, f, gamma=None, beta=None) -> Tensor:
    x = ad.as_tensor(x)
    fx = f(x)
    if fx.shape != x.shape:
        raise ValueError(f"sublayer output shape {fx.shape} != input shape {x.shape}")
    return layer_norm(x + fx, gamma, beta)


def second_difference(x, dt: float = 1.0):
    if isinstance(x, Tensor):
        return (x[:, 2:, :] - x[:, 1:-1, :] * 2.0 + x[:, :-2, :]) * (1.0 / (dt * dt))
    x = np.asarray(x, float)
    return (x[:, 2:, :] - 2.0 * x[:, 1:-1, :] + x[:, :-2, :]) / (dt * dt)


def pde_residual(x, x_rec, omega: float, dt: float = 1.0) -> Tensor:
    """sin(d²x̃/dt²)·ω − cos(d²x/dt²) on interior steps of ``[batch, seq, features]`` arrays."""
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, float)
    if xd.ndim == 2:
        xd = xd[None]
    xr = ad.as_tensor(x_rec)
    if xr.ndim == 2:
        xr = ad.reshape(xr, (1,) + xr.shape)
    if xd.shape[1] < 3:
        raise ValueError("pde residual needs seq_len >= 3")
    term2 = np.cos(second_difference(xd, dt))
    term1 = ad.sin(second_difference(xr, dt)) * float(omega)
    return term1 - term2


def kl_divergence(mu, logvar) -> Tensor:
    mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
    per = ad.sum(logvar * -1.0 - 1.0 + mu * mu + ad.exp(logvar), axis=-1) * 0.5
    return ad.mean(per)


def mse(x, x_rec) -> Tensor:
    d = ad.as_tensor(x_rec) - ad.as_tensor(x)
    return ad.mean(d * d)


def total_loss(x, x_rec, mu, logvar, omega, dt, alpha, beta, gamma):
    """Returns ``(loss, parts)`` with parts = {mse, kl, pde} as floats."""
    m = mse(x, x_rec)
    k = kl_divergence(mu, logvar)
    r = pde_residual(x, x_rec, omega, dt)
    p = ad.mean(r * r)
    loss = m * alpha + k * beta + p * gamma
    return loss, {"mse": float(m.data), "kl": float(k.data), "pde": float(p.data)}


# ---------------------------------------------------------------- the model


class PinnModel:
    def __init__(self, features: int, seq_len: int, omega: float, hyper: Optional[Hyper] = None):
        if seq_len < 1:
            raise ValueError("head count must be >= 1")
        self.hyper = hyper or Hyper()
        self.features = int(features)
        self.seq_len = int(seq_len)
        self.heads = int(seq_len)
        self.omega = float(omega)
        self.d = int(self.hyper.d_model)
        self.dk = max(self.features, 4)
        self.latent = self.hyper.latent or max(2, self.features // 2)
        self.layers = self.hyper.layers if self.hyper.layers is not None else self.seq_len
        self.theta: Optional[float] = None
        self.lo: Optional[np.ndarray] = None
        self.hi: Optional[np.ndarray] = None
        self.tags: list = []
        self.history: list = []
        self.params: dict = {}
        self._init(np.random.default_rng(self.hyper.seed))

    def _p(self, rng, name, fan_in, shape, zero=False, one=False):
        if one:
            data = np.ones(shape)
        elif zero:
            data = np.zeros(shape)
        else:
            b = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-b, b, size=shape)
        self.params[name] = Tensor(data, requires_grad=True, name=name)

    def _init_block(self, rng, pre):
        d, dk, h = self.d, self.dk, self.heads
        for k in range(h):
            for w in ("q", "k", "v"):
                self._p(rng, f"{pre}.h{k}.W{w}", d, (d, dk))
        self._p(rng, f"{pre}.Wo", h * dk, (h * dk, d))
        self._p(rng, f"{pre}.bo", h * dk, (d,), zero=True)
        self._p(rng, f"{pre}.ln1.g", d, (d,), one=True)
        self._p(rng, f"{pre}.ln1.b", d, (d,), zero=True)
        self._p(rng, f"{pre}.W1", d, (d, 2 * d))
        self._p(rng, f"{pre}.b1", d, (2 * d,), zero=True)
        self._p(rng, f"{pre}.W2", 2 * d, (2 * d, d))
        self._p(rng, f"{pre}.b2", 2 * d, (d,), zero=True)
        self._p(rng, f"{pre}.ln2.g", d, (d,), one=True)
        self._p(rng, f"{pre}.ln2.b", d, (d,), zero=True)

    def _init(self, rng):
        F, T, d, L = self.features, self.seq_len, self.d, self.latent
        self._p(rng, "in.W", F, (F, d))
        self._p(rng, "in.b", F, (d,), zero=True)
        for l in range(self.layers):
            self._init_block(rng, f"enc{l}")
        self._p(rng, "mu.W", T * d, (T * d, L))
        self._p(rng, "mu.b", T * d, (L,), zero=True)
        self._p(rng, "lv.W", T * d, (T * d, L))
        self._p(rng, "lv.b", T * d, (L,), zero=True)
        self._p(rng, "z.W", L, (L, T * d))
        self._p(rng, "z.b", L, (T * d,), zero=True)
        for l in range(self.layers):
            self._init_block(rng, f"dec{l}")
        self._p(rng, "out.W", d, (d, F))
        self._p(rng, "out.b", d, (F,), zero=True)

    # -- forward
    def _block(self, x, pre):
        P = self.params

        def mha(x):
            heads = [attention_rank(x @ P[f"{pre}.h{k}.Wq"], x @ P[f"{pre}.h{k}.Wk"], x @ P[f"{pre}.h{k}.Wv"])
                     for k in range(self.heads)]
            cat = heads[0] if len(heads) == 1 else ad.concat(heads, axis=-1)
            return cat @ P[f"{pre}.Wo"] + P[f"{pre}.bo"]

        def ffn(x):
            return ad.tanh(x @ P[f"{pre}.W1"] + P[f"{pre}.b1"]) @ P[f"{pre}.W2"] + P[f"{pre}.b2"]

        x = sublayer(x, mha, P[f"{pre}.ln1.g"], P[f"{pre}.ln1.b"])
        return sublayer(x, ffn, P[f"{pre}.ln2.g"], P[f"{pre}.ln2.b"])

    def forward(self, x, rng: Optional[np.random.Generator] = None, check: bool = False):
        """Returns ``(reconstruction, mean, logvar)``.  ``rng`` switches on the sampling path."""
        P = self.params
        x = ad.as_tensor(x)
        if x.ndim != 3 or x.shape[1] != self.seq_len or x.shape[2] != self.features:
            raise ValueError(f"expected [batch, {self.seq_len}, {self.features}], got {x.shape}")
        B = x.shape[0]

        def guard(t, where):
            if check and not np.all(np.isfinite(t.data)):
                raise PinnError(f"non-finite activation after {where}")
            return t

        h = guard(x @ P["in.W"] + P["in.b"], "input projection")
        for l in range(self.layers):
            h = guard(self._block(h, f"enc{l}"), f"encoder layer {l}")
        flat = ad.reshape(h, (B, self.seq_len * self.d))
        mu = flat @ P["mu.W"] + P["mu.b"]
        logvar = ad.clip(flat @ P["lv.W"] + P["lv.b"], LOGVAR_MIN, LOGVAR_MAX)
        if rng is not None:
            eps = rng.standard_normal(mu.shape)
            z = mu + ad.exp(logvar * 0.5) * eps
        else:
            z = mu
        h = ad.reshape(z @ P["z.W"] + P["z.b"], (B, self.seq_len, self.d))
        for l in range(self.layers):
            h = guard(self._block(h, f"dec{l}"), f"decoder layer {l}")
        rec = guard(h @ P["out.W"] + P["out.b"], "output projection")
        return rec, mu, logvar

    def loss(self, x, rng=None, gamma: Optional[float] = None):
        hp = self.hyper
        rec, mu, lv = self.forward(x, rng)
        return total_loss(x, rec, mu, lv, self.omega, hp.dt, hp.alpha, hp.beta,
                          hp.gamma if gamma is None else gamma)

    def reconstruct(self, x) -> np.ndarray:
        return self.forward(x)[0].data

    def n_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.params.values()]))
