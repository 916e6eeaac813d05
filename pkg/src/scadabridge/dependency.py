"""Read-before-Write dependencies and control time / burst / frequency features."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _kernels
from .trace import READ, WRITE, ProcessControlOperation


@dataclass
class RbwDependency:
    src: str
    dst: str
    occurrences: list = field(default_factory=list)  # (ts_read, ts_write)

    @property
    def key(self) -> tuple:
        return (self.src, self.dst)


@dataclass(frozen=True)
class DependentWrite:
    """One WRITE on ``dst`` governed by the last READ of ``src``."""

    src: str
    dst: str
    read_index: int
    write_index: int
    ts_read: int
    ts_write: int
    delta: int  # control time against the nearest prior WRITE on src (or the READ)


def _codes(op: ProcessControlOperation):
    cmds = op.commands
    ts = np.fromiter((c.ts for c in cmds), dtype=np.int64, count=len(cmds))
    is_read = np.fromiter((c.op == READ for c in cmds), dtype=np.bool_, count=len(cmds))
    return ts, is_read


def dependent_writes(op: ProcessControlOperation) -> list:
    """Every WRITE with a governing READ, in command order."""
    cmds = op.commands
    if not cmds:
        return []
    ts, is_read = _codes(op)
    gov = _kernels.last_read_before(ts, is_read)
    last_write: dict = {}
    out = []
    for w, c in enumerate(cmds):
        if c.op != WRITE:
            continue
        r = int(gov[w])
        if r >= 0:
            src = cmds[r].tag
            prior = last_write.get(src)
            ref = cmds[prior].ts if prior is not None else cmds[r].ts
            out.append(DependentWrite(src, c.tag, r, w, cmds[r].ts, c.ts, abs(ref - c.ts)))
        last_write[c.tag] = w
    return out


def extract_rbw(op: ProcessControlOperation) -> list:
    """Read-before-Write dependencies of one operation, ordered by first occurrence."""
    deps: dict = {}
    for d in dependent_writes(op):
        dep = deps.get((d.src, d.dst))
        if dep is None:
            dep = deps[(d.src, d.dst)] = RbwDependency(d.src, d.dst)
        dep.occurrences.append((d.ts_read, d.ts_write))
    return list(deps.values())


def control_time_samples(deps, op: ProcessControlOperation) -> dict:
    """Map (i, j) -> control-time samples (scan cycles) for the dependent pairs in ``deps``."""
    wanted = {(d.src, d.dst) for d in deps}
    out: dict = {}
    for d in dependent_writes(op):
        if (d.src, d.dst) in wanted:
            out.setdefault((d.src, d.dst), []).append(d.delta)
    return out


@dataclass(frozen=True)
class Burst:
    tag: str
    size: int
    end_index: int
    ts: int  # ts of the last WRITE in the burst


def bursts(op: ProcessControlOperation) -> list:
    """Maximal runs of consecutive WRITEs to one device, in order."""
    cmds = op.commands
    if not cmds:
        return []
    ids: dict = {}
    codes = np.fromiter(
        (ids.setdefault(c.tag, len(ids)) if c.op == WRITE else -1 for c in cmds),
        dtype=np.int64, count=len(cmds))
    names = list(ids)
    dev, size, end = _kernels.burst_runs(codes)
    return [Burst(names[d], int(s), int(e), cmds[int(e)].ts) for d, s, e in zip(dev, size, end)]


def burst_sizes(op: ProcessControlOperation) -> dict:
    out: dict = {}
    for b in bursts(op):
        out.setdefault(b.tag, []).append(b.size)
    return out


def control_frequency(op: ProcessControlOperation) -> dict:
    """Map device -> (WRITE count on it, total commands in the operation)."""
    total = len(op.commands)
    counts: dict = {}
    for c in op.commands:
        if c.op == WRITE:
            counts[c.tag] = counts.get(c.tag, 0) + 1
    return {k: (v, total) for k, v in counts.items()}


@dataclass
class FeatureSet:
    event: str
    op_len: int
    intervals: dict
    bursts: dict
    freq: dict

    def to_json(self) -> str:
        return json.dumps({
            "event": self.event,
            "op_len": self.op_len,
            "intervals": [[i, j, v] for (i, j), v in self.intervals.items()],
            "bursts": self.bursts,
            "freq": {k: list(v) for k, v in self.freq.items()},
        }, sort_keys=True)


def features(op: ProcessControlOperation) -> FeatureSet:
    deps = extract_rbw(op)
    return FeatureSet(op.event, len(op.commands), control_time_samples(deps, op),
                      burst_sizes(op), control_frequency(op))


@dataclass
class Edge:
    src: str
    dst: str
    occurrences: list = field(default_factory=list)
    intervals: list = field(default_factory=list)


@dataclass
class DependencyGraph:
    nodes: list = field(default_factory=list)
    edges: dict = field(default_factory=dict)

    def add_node(self, tag: str) -> None:
        if tag not in self.nodes:
            self.nodes.append(tag)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def in_degree(self, tag: str) -> int:
        return sum(1 for (_, j) in self.edges if j == tag)

    def out_degree(self, tag: str) -> int:
        return sum(1 for (i, _) in self.edges if i == tag)

    def incoming(self, tag: str) -> dict:
        """src -> occurrence count for edges ending at ``tag``."""
        return {i: len(e.occurrences) for (i, j), e in self.edges.items() if j == tag}

    def to_dict(self) -> dict:
        return {
            "nodes": [{"tag": n, "in": self.in_degree(n), "out": self.out_degree(n)} for n in self.nodes],
            "edges": [{"src": e.src, "dst": e.dst,
                       "occurrences": [list(o) for o in e.occurrences],
                       "intervals": list(e.intervals)} for e in self.edges.values()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_dot(self) -> str:
        lines = ["digraph rbw {"]
        for n in self.nodes:
            lines.append(f'  "{n}";')
        for e in self.edges.values():
            lines.append(f'  "{e.src}" -> "{e.dst}" [label="{len(e.occurrences)}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_graph(all_ops: Iterable[ProcessControlOperation]) -> DependencyGraph:
    g = DependencyGraph()
    for op in all_ops:
        for d in dependent_writes(op):
            g.add_node(d.src)
            g.add_node(d.dst)
            e = g.edges.get((d.src, d.dst))
            if e is None:
                e = g.edges[(d.src, d.dst)] = Edge(d.src, d.dst)
            e.occurrences.append((d.ts_read, d.ts_write))
            e.intervals.append(d.delta)
    return g
