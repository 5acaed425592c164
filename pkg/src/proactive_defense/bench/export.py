"""Export reports as JSON, CSV and markdown tables plus plot-data grids.

Files written to ``out_dir``:

    report.json          list of report objects
    summary.csv          one row per scenario: efficacy, latency, cost, surviving rate and CI
    table.md             efficacy/latency/cost by scenario, with baseline reference rows
    steps_grid.csv       scenario, episode, mean steps-to-success, reference value if published
    stage_accuracy.csv   scenario, stage, accuracy
"""
from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Optional, Sequence, Union

from .metrics import MetricsError, Report
from .runner import STAGES

SCENARIO_ORDER = ("syn_flood", "slow_http", "memory_dos")
SCENARIO_TITLE = {"syn_flood": "SYN Flooding", "slow_http": "SlowHTTP", "memory_dos": "Memory DoS"}
COLUMNS = ("Efficacy (%)", "Latency (s)", "Cost ($)")

# published baseline results: (efficacy %, latency s, cost $) per scenario in SCENARIO_ORDER
REFERENCE_ROWS = {
    "DQN": ((82.68, 0.0595, 0.0135), (84.94, 0.0601, 0.0136), (56.07, 0.2117, 0.0479)),
    "AC": ((73.65, 0.1189, 0.0269), (77.35, 0.1134, 0.0256), (54.90, 0.6142, 0.1389)),
    "PPO": ((73.00, 0.5429, 0.1228), (78.79, 0.4740, 0.1072), (55.56, 1.1341, 0.2565)),
}
# published mean steps-to-success at episodes 1 and 10
REFERENCE_STEPS = {
    "syn_flood": {1: 10.05, 10: 5.64},
    "slow_http": {1: 9.69, 10: 5.26},
    "memory_dos": {1: 16.02, 10: 6.40},
}


def _ordered(reports: Sequence[Report]) -> list[Report]:
    rank = {s: i for i, s in enumerate(SCENARIO_ORDER)}
    return sorted(reports, key=lambda r: (rank.get(r.scenario, len(rank)), r.scenario, r.backend))


def _fmt(x: Optional[float], digits: int) -> str:
    return "n/a" if x is None else f"{x:.{digits}f}"


def markdown_table(reports: Sequence[Report], label: Optional[str] = None) -> str:
    by_scenario = {}
    for r in reports:
        by_scenario.setdefault(r.scenario, r)
    head = "| Method | " + " | ".join(f"{SCENARIO_TITLE[s]} {c}" for s in SCENARIO_ORDER for c in COLUMNS) + " |"
    sep = "|---" * (1 + len(SCENARIO_ORDER) * len(COLUMNS)) + "|"
    rows = [head, sep]
    backends = sorted({r.backend for r in reports})
    name = label or f"this run ({', '.join(backends)})"
    cells = []
    for s in SCENARIO_ORDER:
        r = by_scenario.get(s)
        cells += ([_fmt(100 * r.efficacy, 2), _fmt(r.latency, 4), _fmt(r.cost, 4)] if r else ["n/a"] * 3)
    rows.append(f"| {name} | " + " | ".join(cells) + " |")
    for method, vals in REFERENCE_ROWS.items():
        cells = [f"{v:.2f}" if i == 0 else f"{v:.4f}" for triple in vals for i, v in enumerate(triple)]
        rows.append(f"| {method} (reference) | " + " | ".join(cells) + " |")
    notes = sorted({n for r in reports for n in r.notes})
    footer = "".join(f"\nNote: {n}." for n in notes)
    return "\n".join(rows) + "\n" + footer + ("\n" if footer else "")


def _csv(rows: list[dict], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def summary_csv(reports: Sequence[Report]) -> str:
    fields = ("scenario", "backend", "trials", "errored", "episodes", "efficacy", "latency", "cost",
              "surviving_rate", "ci_low", "ci_high")
    rows = [{"scenario": r.scenario, "backend": r.backend, "trials": r.trials, "errored": r.errored,
             "episodes": r.episodes, "efficacy": r.efficacy, "latency": r.latency, "cost": r.cost,
             "surviving_rate": r.surviving_rate, "ci_low": r.ci_low, "ci_high": r.ci_high}
            for r in reports]
    return _csv(rows, fields)


def steps_grid_csv(reports: Sequence[Report]) -> str:
    rows = []
    for r in reports:
        ref = REFERENCE_STEPS.get(r.scenario, {})
        for ep in sorted(set(r.steps_by_episode) | set(ref)):
            v = r.steps_by_episode.get(ep)
            rows.append({"scenario": r.scenario, "backend": r.backend, "episode": ep,
                         "steps": "" if v is None else v, "reference": ref.get(ep, "")})
    return _csv(rows, ("scenario", "backend", "episode", "steps", "reference"))


def stage_accuracy_csv(reports: Sequence[Report]) -> str:
    rows = [{"scenario": r.scenario, "backend": r.backend, "stage": s, "accuracy": r.stage_accuracy[s]}
            for r in reports for s in STAGES]
    return _csv(rows, ("scenario", "backend", "stage", "accuracy"))


def export(reports: Sequence[Report], out_dir: Union[str, os.PathLike], label: Optional[str] = None) -> list[Path]:
    """Render everything in memory first, then write each file via a temp file and rename."""
    reports = _ordered(list(reports))
    if not reports:
        raise MetricsError("empty report: nothing to export")
    files = {
        "report.json": json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n",
        "summary.csv": summary_csv(reports),
        "table.md": markdown_table(reports, label),
        "steps_grid.csv": steps_grid_csv(reports),
        "stage_accuracy.csv": stage_accuracy_csv(reports),
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmps = []
    try:
        for name, text in files.items():
            tmp = out / f".{name}.tmp"
            tmp.write_text(text, encoding="utf-8")
            tmps.append((tmp, out / name))
        for tmp, final in tmps:
            os.replace(tmp, final)
    finally:
        for tmp, _ in tmps:
            if tmp.exists():
                tmp.unlink()
    return [final for _, final in tmps]


def load_reports(path: Union[str, os.PathLike]) -> list[Report]:
    return [Report.from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]
