"""scadabridge command line.

Every subcommand reads and writes plain files.  Defaults can be supplied
with ``--config file.json`` (keys are option names); explicit flags win.
Exit codes: 0 ok, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path


from . import constraints as rc
from . import correlate as cr
from . import dependency as dep
from . import monitor as mon
from . import sim
from . import trace as tm
from .pinn import Hyper, ProcessAnomaly, anomaly_runs, load_model, make_sequences, save_model, score_series
from .pinn import split_batch, train
from .pinn.train import TrainingError

log = logging.getLogger("scadabridge")

USAGE_ERROR = 1
DATA_ERROR = 2

DATA_ERRORS = (tm.TraceError, sim.ConfigError, sim.SimulationError, rc.ConstraintError, cr.InertiaError,
               TrainingError, mon.StreamError, ValueError, KeyError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _fmt_help(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, max_help_position=34)


# ------------------------------------------------------------------ helpers


def _series(path):
    frames = tm.parse_series(path)
    if not frames:
        raise ValueError(f"{path}: empty series")
    return tm.series_to_arrays(frames)


def _columns(tags, values, wanted):
    missing = [t for t in wanted if t not in tags]
    if missing:
        raise ValueError(f"series lacks columns {missing}")
    return values[:, [tags.index(t) for t in wanted]]


def _default_features(tags):
    for names in sim.SENSOR_TAGS.values():
        if all(t in tags for t in names):
            return list(names)
    return list(tags)


def _split(s):
    return [x.strip() for x in s.split(",") if x.strip()] if s else []


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _scenario(args) -> sim.ScenarioConfig:
    src = args.scenario
    if src in ("dosing", "conveyor"):
        cfg = sim.ScenarioConfig.preset(src)
    else:
        cfg = sim.ScenarioConfig.load(src)
    over = {k: getattr(args, k) for k in ("setpoint", "n_ops", "duration", "noise", "inertia_seconds")
            if getattr(args, k) is not None}
    over["seed"] = args.seed
    d = cfg.to_dict()
    d.update(over)
    return sim.ScenarioConfig.from_dict(d)


# -------------------------------------------------------------- subcommands


def cmd_simulate(args):
    cfg = _scenario(args)
    attack = None
    if args.attack:
        attack = sim.AttackSpec.load(args.attack)
    elif args.attack_category:
        attack = sim.default_attack(args.attack_category, cfg, args.attack_op)
    out = sim.simulate(cfg, attack)
    paths = out.save(args.out)
    _write_json(Path(args.out) / "scenario.json", cfg.to_dict())
    print(f"wrote {paths['trace']} ({len(out.commands)} commands, {len(out.operations)} operations)")
    print(f"wrote {paths['series']} ({len(out.ts)} frames)")
    return 0


def cmd_extract(args):
    ops = tm.segment_operations(tm.parse_trace(args.trace))
    with open(args.out, "w", encoding="utf-8") as fh:
        for op in ops:
            fh.write(dep.features(op).to_json() + "\n")
    g = dep.build_graph(ops)
    if args.graph:
        Path(args.graph).write_text(g.to_json() + "\n", encoding="utf-8")
    if args.dot:
        Path(args.dot).write_text(g.to_dot(), encoding="utf-8")
    print(f"{len(ops)} operations, graph {g.n_nodes} nodes / {g.n_edges} edges")
    return 0


def cmd_learn(args):
    ops = []
    for path in args.trace:
        ops += tm.segment_operations(tm.parse_trace(path))
    model = rc.build_constraint_model(ops, epsilon=not args.no_epsilon, lambda_mode=args.lambda_mode)
    model.save(args.out)
    flat = model.flat()
    print(f"{len(flat)} constraints from {model.n_ops} operations -> {args.out}")
    if args.list:
        for k in sorted(flat):
            print(f"  {k}: {flat[k]:.6g}")
    return 0


def cmd_monitor(args):
    model = rc.ConstraintModel.load(args.model)
    cmds = tm.parse_trace(args.trace)
    if args.stream:
        alerts = list(mon.stream_monitor(cmds, None, model, args.tol, args.reference, args.provisional))
    else:
        alerts = mon.check_trace(tm.segment_operations(cmds), model, args.tol, args.reference)
    mon.write_alerts(args.out, alerts)
    by_kind = Counter(a.kind for a in alerts)
    print(f"{len(alerts)} alerts " + " ".join(f"{k}={v}" for k, v in sorted(by_kind.items())))
    return 0


def _itb(args):
    if args.itb is not None:
        return args.itb, float(args.itb)
    if args.profile:
        prof = cr.InertiaProfile.from_dict(json.loads(Path(args.profile).read_text(encoding="utf-8")))
        return prof.itb, prof.inertia_seconds
    raise UsageError("one of --itb or --profile is required")


def cmd_train(args):
    ts, tags, values = _series(args.series)
    feats = _split(args.tags) or _default_features(tags)
    itb, inertia = _itb(args)
    hyper = Hyper(alpha=args.alpha, beta=args.beta, gamma=args.gamma, lr=args.lr, epochs=args.epochs,
                  batch_size=args.batch_size, seed=args.seed)
    data = make_sequences(_columns(tags, values, feats), itb, ts=ts, tags=feats)
    tr, va = split_batch(data, args.holdout)
    model = train(tr, hyper, omega=args.omega if args.omega is not None else inertia, val=va)
    save_model(model, args.out)
    last = model.history[-1]
    print(f"trained {len(tr)} windows x {itb} frames on {feats}; final loss {last['total']:.6g}, "
          f"theta {model.theta:.6g} -> {args.out}")
    return 0


def cmd_score(args):
    model = load_model(args.model)
    ts, tags, values = _series(args.series)
    end, err, flagged = score_series(model, ts, _columns(tags, values, model.tags))
    runs = anomaly_runs(end, err, flagged)
    with open(args.out, "w", encoding="utf-8") as fh:
        for r in runs:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    if args.windows:
        with open(args.windows, "w", encoding="utf-8") as fh:
            fh.write("end_ts,error,flagged\n")
            for t, e, f in zip(end, err, flagged):
                fh.write(f"{t:g},{e:.9g},{int(f)}\n")
    print(f"{int(flagged.sum())}/{len(flagged)} windows above theta, {len(runs)} anomalies")
    return 0


def cmd_itb(args):
    ts, tags, values = _series(args.series)
    hdr: dict = {}
    cmds = tm.parse_trace(args.trace, hdr)
    rate = int(hdr.get("scan_cycles_per_second", tm.DEFAULT_SCAN_RATE))
    col = _columns(tags, values, [args.tag])[:, 0]
    method = cr.START_SETTLE if args.start else cr.STOP_DECAY
    prof = cr.derive_inertia(ts, col, cmds, args.stop_tag, rate, method, args.delta)
    _write_json(args.out, prof.to_dict())
    print(f"inertia {prof.inertia_seconds:.3f} s over {prof.samples} events, itb {prof.itb}")
    return 0


def cmd_correlate(args):
    alerts = mon.read_alerts(args.alerts)
    anomalies = [ProcessAnomaly(**d) for d in _read_jsonl(args.anomalies)]
    prof = cr.InertiaProfile.from_dict(json.loads(Path(args.profile).read_text(encoding="utf-8")))
    ts, tags, values = _series(args.series)
    feats = _split(args.tags) or _default_features(tags)
    verdicts = cr.correlate(alerts, anomalies, prof, ts, _columns(tags, values, feats), args.scan_rate,
                            args.cap, args.ss_fraction)
    cr.write_verdicts(args.out, verdicts)
    c = Counter(v.verdict for v in verdicts)
    print(f"{len(verdicts)} verdicts " + " ".join(f"{k}={n}" for k, n in sorted(c.items())))
    return 0


def render_report(rows, fmt="text") -> str:
    """Operator summary of verdict records (dicts as written by ``correlate``)."""
    counts = Counter(r["verdict"] for r in rows)
    confirmed = [r for r in rows if r["verdict"] == cr.CONFIRMED]
    md = fmt == "md"
    out = ["# Correlation report" if md else "Correlation report", ""]
    out.append(f"{len(rows)} SCADA alerts: " + ", ".join(f"{k} {counts[k]}" for k in
               (cr.CONFIRMED, cr.DISCARDED_PRECEDING_EFFECT, cr.DISCARDED_NO_EFFECT)))
    out.append("")
    if md:
        out += ["| t0 (s) | alert | devices | observed / limit | window (s) | verdict | anomaly onset (s) |",
                "|---|---|---|---|---|---|---|"]
    for r in rows:
        s, w = r["scada"], r["window"]
        onsets = ", ".join(f"{a['onset']:g}" for a in r["process"]["anomalies"]) or "-"
        dev = " -> ".join(r["devices"])
        lim = f"{s['observed']:.4g} / {s['constraint']:.4g}"
        span = f"{w['start']:g}-{w['end']:g}"
        if md:
            out.append(f"| {r['t0']:g} | {s['kind']} | {dev} | {lim} | {span} | {r['verdict']} | {onsets} |")
        else:
            out.append(f"t0={r['t0']:g}s  {s['kind']:<13} {dev:<24} {lim:<20} window {span:<14} "
                       f"{r['verdict']}  onset {onsets}")
    if confirmed:
        out.append("")
        devs = sorted({d for r in confirmed for d in r["devices"]})
        out.append(("**Attack confirmed.** " if md else "ATTACK CONFIRMED. ") + "Affected devices: " + ", ".join(devs))
    return "\n".join(out) + "\n"


def cmd_report(args):
    text = render_report(cr.read_verdicts(args.verdicts), args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scadabridge", description=__doc__.splitlines()[0], formatter_class=_fmt_help)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_, formatter_class=_fmt_help)
        sp.add_argument("--config", help="JSON file of option defaults (flags override)")
        sp.set_defaults(func=fn)
        return sp

    s = add("simulate", cmd_simulate, "run the plant simulator and write trace + series")
    s.add_argument("--scenario", default="dosing", help="preset name (dosing, conveyor) or scenario JSON")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", default="run", help="output directory")
    s.add_argument("--attack", help="attack spec JSON")
    s.add_argument("--attack-category", choices=sim.CATEGORIES, help="inject a default attack of this kind")
    s.add_argument("--attack-op", type=int, default=1, help="operation index a default attack targets")
    s.add_argument("--setpoint", type=float, help="override the scenario setpoint")
    s.add_argument("--n-ops", type=int, help="override the number of operations")
    s.add_argument("--duration", type=float, help="override the run length in seconds")
    s.add_argument("--noise", type=float, help="override sensor noise (peak-to-peak fraction of range)")
    s.add_argument("--inertia-seconds", type=float, help="override actuator inertia")

    s = add("extract", cmd_extract, "per-operation dependency features and the dependency graph")
    s.add_argument("--trace", required=True)
    s.add_argument("--out", default="features.jsonl")
    s.add_argument("--graph", help="write the graph as JSON")
    s.add_argument("--dot", help="write the graph as Graphviz DOT")

    s = add("learn-constraints", cmd_learn, "learn R_D constraints from benign traces")
    s.add_argument("--trace", required=True, nargs="+")
    s.add_argument("--out", default="constraints.json")
    s.add_argument("--no-epsilon", action="store_true", help="disable the dependency adjustment (eps = 0)")
    s.add_argument("--lambda-mode", default="rarity", choices=("rarity", "modal", "none"))
    s.add_argument("--list", action="store_true", help="print every constraint")

    s = add("monitor", cmd_monitor, "check a trace against learned constraints")
    s.add_argument("--trace", required=True)
    s.add_argument("--model", required=True, help="constraints JSON")
    s.add_argument("--out", default="alerts.jsonl")
    s.add_argument("--tol", type=float, default=1.0)
    s.add_argument("--reference", default="observed", choices=("observed", "trained"),
                   help="control-time reference interval")
    s.add_argument("--stream", action="store_true", help="use the streaming monitor")
    s.add_argument("--provisional", action="store_true", help="streaming: emit early frequency alerts")

    s = add("train-pinn", cmd_train, "train the PINN autoencoder on a benign series")
    s.add_argument("--series", required=True)
    s.add_argument("--itb", type=int, help="sequence length (frames)")
    s.add_argument("--profile", help="inertia profile JSON from derive-itb")
    s.add_argument("--tags", help="comma-separated feature columns (default: scenario sensors)")
    s.add_argument("--out", default="pinn.json")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lr", type=float, default=Hyper.lr)
    s.add_argument("--alpha", type=float, default=Hyper.alpha)
    s.add_argument("--beta", type=float, default=Hyper.beta)
    s.add_argument("--gamma", type=float, default=Hyper.gamma)
    s.add_argument("--batch-size", type=int, default=Hyper.batch_size)
    s.add_argument("--omega", type=float, help="PDE frequency (default: the inertia in seconds)")
    s.add_argument("--holdout", type=float, default=0.2, help="fraction of windows used to set theta")

    s = add("score", cmd_score, "score a series with a trained PINN")
    s.add_argument("--series", required=True)
    s.add_argument("--model", required=True, help="PINN JSON")
    s.add_argument("--out", default="anomalies.jsonl")
    s.add_argument("--windows", help="also write per-window scores as CSV")

    s = add("derive-itb", cmd_itb, "derive the inertia time block from stop events")
    s.add_argument("--series", required=True)
    s.add_argument("--trace", required=True)
    s.add_argument("--tag", default="F.Meter.2", help="series column the actuator drives")
    s.add_argument("--stop-tag", default="Valve.2", help="actuator whose WRITEs are the events")
    s.add_argument("--delta", type=float, default=cr.DEFAULT_DELTA, help="decay threshold, fraction of initial rate")
    s.add_argument("--start", action="store_true", help="use start (settle) events instead of stops")
    s.add_argument("--out", default="itb.json")

    s = add("correlate", cmd_correlate, "correlate SCADA alerts with process anomalies")
    s.add_argument("--alerts", required=True)
    s.add_argument("--anomalies", required=True)
    s.add_argument("--profile", required=True, help="inertia profile JSON")
    s.add_argument("--series", required=True)
    s.add_argument("--tags", help="comma-separated columns for the steady-state test (default: scenario sensors)")
    s.add_argument("--scan-rate", type=int, default=tm.DEFAULT_SCAN_RATE, help="scan cycles per second")
    s.add_argument("--cap", type=int, default=cr.DEFAULT_CAP, help="max evolution window, in ITBs")
    s.add_argument("--ss-fraction", type=float, default=cr.DEFAULT_SS_FRACTION,
                   help="steady-state threshold, fraction of tag range")
    s.add_argument("--out", default="verdicts.jsonl")

    s = add("report", cmd_report, "render verdicts for operators")
    s.add_argument("--verdicts", required=True)
    s.add_argument("--format", default="text", choices=("text", "md"))
    s.add_argument("--out", help="write to a file instead of stdout")
    return p


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, argv) -> None:
    """Install config-file values as subcommand defaults, so explicit flags still win."""
    path = _config_path(argv)
    if path is None:
        return
    command = next((t for t in argv if not t.startswith("-")), None)
    choices = parser._subparsers._group_actions[0].choices
    if command not in choices:
        return
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: expected a JSON object")
    sp = choices[command]
    norm = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(norm) - {a.dest for a in sp._actions} - {"config"})
    if unknown:
        raise UsageError(f"unknown keys in {path}: {unknown}")
    for a in sp._actions:
        if a.dest in norm:
            a.required = False
    sp.set_defaults(**norm)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"scadabridge: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (OSError, ValueError) as exc:
        print(f"scadabridge: config: {exc}", file=sys.stderr)
        return DATA_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"scadabridge {args.command}: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except DATA_ERRORS as exc:
        print(f"scadabridge {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
