"""JSON persistence for PinnModel."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import Hyper, PinnModel

SCHEMA = "bridge-pinn/1"


def to_dict(model: PinnModel) -> dict:
    return {
        "schema": SCHEMA,
        "features": model.features,
        "seq_len": model.seq_len,
        "omega": model.omega,
        "hyper": asdict(model.hyper),
        "theta": model.theta,
        "scaler": {"lo": None if model.lo is None else model.lo.tolist(),
                   "hi": None if model.hi is None else model.hi.tolist()},
        "tags": list(model.tags),
        "history": model.history,
        "params": {k: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
                   for k, p in model.params.items()},
    }


def from_dict(d: dict) -> PinnModel:
    if d.get("schema") != SCHEMA:
        raise ValueError(f"unsupported model schema {d.get('schema')!r}")
    m = PinnModel(d["features"], d["seq_len"], d["omega"], Hyper(**d["hyper"]))
    for k, p in d["params"].items():
        if k not in m.params:
            raise ValueError(f"unexpected parameter {k!r}")
        m.params[k].data = np.asarray(p["data"], dtype=np.float64).reshape(p["shape"])
    if set(d["params"]) != set(m.params):
        raise ValueError("parameter set does not match the architecture")
    m.theta = d.get("theta")
    sc = d.get("scaler") or {}
    m.lo = None if sc.get("lo") is None else np.asarray(sc["lo"], float)
    m.hi = None if sc.get("hi") is None else np.asarray(sc["hi"], float)
    m.tags = list(d.get("tags", []))
    m.history = list(d.get("history", []))
    return m


def save_model(model: PinnModel, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model)) + "\n", encoding="utf-8")


def load_model(path) -> PinnModel:
    return from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
