"""Comparison tables across finished run directories.

Reads each run directory's ``report.json`` and tabulates final test errors,
noise-detection quality, and correction quality. When a baseline run is
present, a delta column (baseline error minus run error) is added.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

__all__ = ["collect_run_rows", "render_table", "write_table_csv"]

logger = logging.getLogger(__name__)

COLUMNS = [
    "run",
    "mode",
    "seed",
    "err_net1",
    "err_net2",
    "err_ensemble",
    "delta_vs_baseline",
    "label_auc",
    "label_precision",
    "label_recall",
    "image_auc",
    "correction_reduction",
]


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        if math.isnan(value):
            return "n/a"
        return f"{value:.4f}"
    return str(value)


def collect_run_rows(run_dirs) -> list[dict]:
    """One row per run directory; directories without a report are skipped
    with a warning."""
    rows = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        report_path = run_dir / "report.json"
        if not report_path.is_file():
            logger.warning("skipping %s: no report.json", run_dir)
            continue
        with open(report_path, "r", encoding="utf-8") as fh:
            report = json.load(fh)
        cfg = report.get("config", {})
        final = report.get("final", {}) or {}
        detect = report.get("detection_first_epoch") or {}
        net1 = detect.get("net1", {})
        row = {
            "run": run_dir.name,
            "mode": cfg.get("mode", "?"),
            "seed": cfg.get("seed", "?"),
            "err_net1": final.get("net1"),
            "err_net2": final.get("net2"),
            "err_ensemble": final.get("ensemble"),
            "delta_vs_baseline": None,
            "label_auc": net1.get("label", {}).get("auc"),
            "label_precision": net1.get("label", {}).get("precision"),
            "label_recall": net1.get("label", {}).get("recall"),
            "image_auc": net1.get("image", {}).get("auc"),
            "correction_reduction": net1.get("correction", {}).get("reduction"),
        }
        rows.append(row)

    baselines = [r for r in rows if r["mode"] == "baseline" and r["err_ensemble"] is not None]
    if baselines:
        ref = baselines[0]["err_ensemble"]
        for r in rows:
            if r["err_ensemble"] is not None:
                r["delta_vs_baseline"] = ref - r["err_ensemble"]
    return rows


def render_table(rows: list[dict]) -> str:
    cells = [[_fmt(r.get(c)) for c in COLUMNS] for r in rows]
    widths = [
        max(len(COLUMNS[i]), *(len(row[i]) for row in cells)) if cells else len(COLUMNS[i])
        for i in range(len(COLUMNS))
    ]
    lines = [
        "  ".join(name.ljust(widths[i]) for i, name in enumerate(COLUMNS)),
        "  ".join("-" * w for w in widths),
    ]
    for row in cells:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


def write_table_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in COLUMNS})
