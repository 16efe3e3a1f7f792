"""
Aggregate a sweep manifest into two tables:
  cells   - per (method, tau): mean final gap, signed peak gap and mean accuracy over seeds
  methods - per method: worst accuracy and accuracy range across the tau grid
"""

import csv
import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from error_handler import DataError
from experiment_flow import METHOD_NAMES, RUN_FILES
from metrics import signed_peak
from sweep_runner import MANIFEST_NAME, load_manifest

logger = logging.getLogger(__name__)

# a negative gap beyond one accuracy point means deployment beat training
FAILURE_GAP = -0.01


@dataclass
class CellRow:
    method: str
    tau: float
    seeds: int
    final_gap: float
    peak_gap: float
    final_accuracy: float
    method_accuracy: float
    training_failure: bool


@dataclass
class MethodRow:
    method: str
    taus: int
    worst_accuracy: float
    accuracy_range: float
    failures: int


def _method_rank(method: str) -> int:
    return METHOD_NAMES.index(method) if method in METHOD_NAMES else len(METHOD_NAMES)


def _summary_for(entry: Dict[str, Any]) -> Optional[Dict[str, Any]]:
    summary = entry.get("summary")
    if summary and "final_selection_gap" in summary:
        return summary
    status = Path(entry.get("run_dir", "")) / RUN_FILES["status"]
    if status.exists():
        summary = json.loads(status.read_text(encoding="utf-8")).get("summary")
        if summary and "final_selection_gap" in summary:
            return summary
    return None


def build_tables(manifest: Dict[str, Any], accuracy_column: str = "a_hard") -> Dict[str, List]:
    groups: Dict[tuple, List[Dict[str, Any]]] = {}
    for entry in manifest.get("cells", {}).values():
        if entry.get("status") != "completed":
            continue
        summary = _summary_for(entry)
        if summary is None:
            logger.warning("Skipping %s: no run summary", entry.get("run_dir"))
            continue
        groups.setdefault((entry["method"], float(entry["tau"])), []).append({**summary, "seed": entry["seed"]})
    if not groups:
        raise DataError("manifest has no completed runs to report")

    cells = []
    for method, tau in sorted(groups, key=lambda k: (_method_rank(k[0]), k[0], k[1])):
        runs = sorted(groups[(method, tau)], key=lambda s: s["seed"])
        finals = [r["final_selection_gap"] for r in runs]
        peak = signed_peak([r["peak_selection_gap"] for r in runs])
        final = float(np.mean(finals))
        cells.append(CellRow(
            method=method, tau=tau, seeds=len(runs), final_gap=final, peak_gap=peak,
            final_accuracy=float(np.mean([r[accuracy_column] for r in runs])),
            method_accuracy=float(np.mean([r["a_method"] for r in runs])),
            training_failure=bool(final < FAILURE_GAP or peak < FAILURE_GAP),
        ))

    methods = []
    for method in sorted({c.method for c in cells}, key=lambda m: (_method_rank(m), m)):
        rows = [c for c in cells if c.method == method]
        accuracies = [c.final_accuracy for c in rows]
        methods.append(MethodRow(
            method=method, taus=len(rows), worst_accuracy=min(accuracies),
            accuracy_range=max(accuracies) - min(accuracies),
            failures=sum(c.training_failure for c in rows),
        ))
    return {"cells": cells, "methods": methods}


def _write_csv(path: Path, rows: List[Any]):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(asdict(rows[0])))
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))


def render_text(tables: Dict[str, List]) -> str:
    lines = ["=== GAP BY METHOD AND TEMPERATURE (final / peak, percentage points) ==="]
    lines.append(f"{'method':<16} {'tau':>6} {'seeds':>5} {'final':>8} {'peak':>8} {'acc':>7}")
    for c in tables["cells"]:
        flag = "  training failure" if c.training_failure else ""
        lines.append(f"{c.method:<16} {c.tau:>6g} {c.seeds:>5d} {100 * c.final_gap:>8.2f} "
                     f"{100 * c.peak_gap:>8.2f} {100 * c.final_accuracy:>6.2f}%{flag}")
    lines.append("")
    lines.append("=== ROBUSTNESS ACROSS TEMPERATURES ===")
    lines.append(f"{'method':<16} {'taus':>4} {'worst acc':>10} {'range':>8}")
    for m in tables["methods"]:
        lines.append(f"{m.method:<16} {m.taus:>4d} {100 * m.worst_accuracy:>9.2f}% {100 * m.accuracy_range:>7.2f}")
    return "\n".join(lines) + "\n"


def build_report(
    manifest_path: Union[str, Path],
    out_dir: Optional[Union[str, Path]] = None,
    accuracy_column: str = "a_hard",
) -> Dict[str, Any]:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    tables = build_tables(load_manifest(manifest_path), accuracy_column)
    out_dir = Path(out_dir) if out_dir else manifest_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "report_cells.csv", tables["cells"])
    _write_csv(out_dir / "report_methods.csv", tables["methods"])
    text = render_text(tables)
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    return {
        "success": True,
        "stage": "report",
        "cells": [asdict(c) for c in tables["cells"]],
        "methods": [asdict(m) for m in tables["methods"]],
        "text": text,
        "outputs": [str(out_dir / name) for name in ("report_cells.csv", "report_methods.csv", "report.txt")],
    }
