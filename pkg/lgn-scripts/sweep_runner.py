"""
Factorial sweeps over (method, tau, seed). The manifest maps every cell to its run
directory and status; rerunning a sweep skips completed cells, and a failed cell is
recorded without stopping the others.
"""

import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

from error_handler import ErrorHandler, LGNError, error_result
from experiment_flow import (
    ExperimentConfig, RUN_FILES, config_from_dict, load_config, run_experiment, validate_config,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
SWEEP_REPORT_NAME = "sweep_report.json"

RunFn = Callable[[ExperimentConfig, Path], Dict[str, Any]]


@dataclass(frozen=True)
class SweepCell:
    method: str
    tau: float
    seed: int

    @property
    def key(self) -> str:
        return f"{self.method}|tau={self.tau:g}|seed={self.seed}"

    @property
    def dir_name(self) -> str:
        return f"{self.method}_tau{self.tau:g}_seed{self.seed}"

    def as_dict(self) -> Dict[str, Any]:
        return {"method": self.method, "tau": self.tau, "seed": self.seed}


def sweep_cells(config: ExperimentConfig) -> List[SweepCell]:
    """Cartesian product of methods x tau grid x seeds, in that nesting order."""
    methods = config.methods or [config.method]
    return [SweepCell(m, float(t), int(s)) for m, t, s in itertools.product(methods, config.tau_grid, config.seeds)]


def cell_config(base: ExperimentConfig, cell: SweepCell) -> ExperimentConfig:
    # CAGE in a sweep is selected through the '+cage' method names
    return replace(base, method=cell.method, tau=cell.tau, seed=cell.seed, cage=None, methods=[])


def load_manifest(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        return {"version": MANIFEST_VERSION, "cells": {}}
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {manifest.get('version')}")
    return manifest


def _save_manifest(path: Path, manifest: Dict[str, Any]):
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, default=str), encoding="utf-8")
    os.replace(tmp, path)


def _is_complete(entry: Optional[Dict[str, Any]]) -> bool:
    if not entry or entry.get("status") != "completed":
        return False
    return (Path(entry["run_dir"]) / RUN_FILES["status"]).exists()


def _run_cell(config_dict: Dict[str, Any], run_dir: str) -> Dict[str, Any]:
    # module-level so worker processes can unpickle it
    try:
        return run_experiment(config_from_dict(config_dict), Path(run_dir))
    except Exception as exc:
        result = error_result(exc, "sweep_worker")
        result["run_dir"] = run_dir
        return result


def _record(manifest: Dict[str, Any], cell: SweepCell, run_dir: Path, result: Dict[str, Any]):
    manifest["cells"][cell.key] = {
        **cell.as_dict(),
        "run_dir": str(run_dir),
        "status": "completed" if result.get("success") else "failed",
        "summary": result.get("summary"),
        "error": None if result.get("success") else result.get("error"),
        "error_code": None if result.get("success") else result.get("error_code"),
        "finished": datetime.now(timezone.utc).isoformat(),
    }


def run_sweep(
    config: ExperimentConfig,
    out_dir: Optional[Union[str, Path]] = None,
    workers: Optional[int] = None,
    runner: Optional[RunFn] = None,
) -> Dict[str, Any]:
    """
    Run every cell not already completed in the manifest. workers > 1 uses a
    bounded process pool; a custom runner always runs sequentially in-process.
    """
    validate_config(config)
    out_dir = Path(out_dir or config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / MANIFEST_NAME
    manifest = load_manifest(manifest_path)
    manifest["base_config"] = config.to_dict()

    handler = ErrorHandler(sweep_id=out_dir.name)
    cells = sweep_cells(config)
    stats = {"total_cells": len(cells), "completed_cells": 0, "skipped_cells": 0, "failed_cells": 0}
    pending = []
    for cell in cells:
        entry = manifest["cells"].get(cell.key)
        if _is_complete(entry):
            logger.info("Skipping completed cell %s", cell.key)
            stats["skipped_cells"] += 1
            continue
        if entry and entry.get("status") == "completed":
            handler.add_warning(f"Cell {cell.key} was completed but its {RUN_FILES['status']} is gone; rerunning",
                                {"cell": cell.as_dict(), "run_dir": entry.get("run_dir")})
            logger.warning("Cell %s lost its run status; rerunning", cell.key)
        pending.append(cell)

    def finish(cell: SweepCell, run_dir: Path, result: Dict[str, Any], exc: Optional[BaseException] = None):
        _record(manifest, cell, run_dir, result)
        _save_manifest(manifest_path, manifest)
        if result.get("success"):
            stats["completed_cells"] += 1
            logger.info("Cell %s completed", cell.key)
        else:
            stats["failed_cells"] += 1
            if exc is not None:
                handler.handle_exception(exc, cell.as_dict(), str(run_dir))
            else:
                handler.handle_run_failure(result, cell.as_dict(), str(run_dir))
            logger.warning("Cell %s failed: %s", cell.key, result.get("error"))

    workers = workers or config.workers
    if runner is not None or workers <= 1 or len(pending) <= 1:
        for cell in pending:
            run_dir = out_dir / cell.dir_name
            logger.info("Running cell %s", cell.key)
            try:
                result = (runner or run_experiment)(cell_config(config, cell), run_dir)
            except Exception as exc:
                finish(cell, run_dir, error_result(exc, "sweep_cell"), exc)
                continue
            finish(cell, run_dir, result)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {}
            for cell in pending:
                run_dir = out_dir / cell.dir_name
                logger.info("Submitting cell %s", cell.key)
                futures[pool.submit(_run_cell, cell_config(config, cell).to_dict(), str(run_dir))] = (cell, run_dir)
            for future in as_completed(futures):
                cell, run_dir = futures[future]
                try:
                    result = future.result()
                except Exception as exc:
                    finish(cell, run_dir, error_result(exc, "sweep_worker"), exc)
                    continue
                finish(cell, run_dir, result)

    _save_manifest(manifest_path, manifest)
    report = handler.generate_report(stats)
    (out_dir / SWEEP_REPORT_NAME).write_text(handler.export_report(report, "json"), encoding="utf-8")
    logger.info("Sweep finished: %d completed, %d skipped, %d failed of %d",
                stats["completed_cells"], stats["skipped_cells"], stats["failed_cells"], stats["total_cells"])
    return {
        "success": stats["failed_cells"] == 0,
        "stage": "sweep",
        "manifest": str(manifest_path),
        "summary": stats,
        "failed_cells": handler.get_failed_cells(),
        "warnings": list(handler.warnings),
        "report": handler.export_report(report, "summary"),
    }


def main(config_path: Optional[str] = None, **overrides) -> Dict[str, Any]:
    try:
        config = load_config(config_path, overrides)
    except LGNError as exc:
        return error_result(exc, "config_validation")
    return run_sweep(config)
