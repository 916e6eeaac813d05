"""Regenerate the hand-built correlation fixtures in this directory.

oldsmar/     one Valve.0 -> Valve.2 control-time alert at 98 s; from 98 s the intake
             stays open and the level climbs linearly; the PINN anomaly is reported at 101 s.
preceding/   the process anomaly opens at 88 s, two seconds before the alert at 90 s.
"""

import json
import math
from pathlib import Path

HERE = Path(__file__).resolve().parent
TAU = 4.7 / math.log(20.0)


def settling(step_at: float, n: int = 160) -> list:
    rows = []
    for t in range(n):
        r = 0.0 if t < step_at else 1.0 - math.exp(-(t - step_at) / TAU)
        level = 2.35 + 1.2 * r
        rows.append((t, level, 0.15 * (1.0 - r), 0.05 * level))
    return rows


def overfill(start: float, n: int = 160) -> list:
    rows = []
    for t in range(n):
        level = 2.35 + (0.03 * (t - start) if t >= start else 0.0)
        rows.append((t, level, 0.15 if t >= start else 0.0, 0.05 * level))
    return rows


def write(sub: str, alert_ts: int, observed: float, anomaly: dict, rows: list) -> None:
    d = HERE / sub
    d.mkdir(exist_ok=True)
    alert = {"ts": alert_ts, "kind": "CONTROL_TIME", "event": "Tank.0", "devices": ["Valve.0", "Valve.2"],
             "observed": observed, "constraint": 0.337}
    (d / "alerts.jsonl").write_text(json.dumps(alert, sort_keys=True) + "\n")
    (d / "anomalies.jsonl").write_text(json.dumps(anomaly, sort_keys=True) + "\n")
    prof = {"inertia_seconds": 4.7, "itb": 5, "method": "STOP_DECAY", "samples": 1, "per_event": [4.7]}
    (d / "itb.json").write_text(json.dumps(prof, indent=2, sort_keys=True) + "\n")
    lines = ["ts,L.Meter.0,F.Meter.0,F.Meter.2"] + [f"{t},{a:.6f},{b:.6f},{c:.6f}" for t, a, b, c in rows]
    (d / "series.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    write("oldsmar", 98000, 0.976, {"onset": 101.0, "end": 112.0, "peak": 0.02, "windows": 12}, overfill(98.0))
    write("preceding", 90000, 0.976, {"onset": 88.0, "end": 99.0, "peak": 0.02, "windows": 12}, settling(86.0))
