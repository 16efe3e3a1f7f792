import csv
import json
import logging
from dataclasses import dataclass, field, asdict, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from circuit import extract_circuit, save_circuit, verify_equivalence
from data_loader import DATASET_NAMES, SYNTHETIC_KINDS, DatasetSpec, load_dataset, resolve_data_dir
from error_handler import ConfigError, LGNError, error_result
from metrics import final_gap, peak_gap
from network import Architecture, build_network, save_checkpoint
from selection import MethodConfig
from training import CageSettings, MetricsLog, TrainConfig, train

logger = logging.getLogger(__name__)

BASE_METHODS = ("soft-mix", "soft-gumbel", "hard-st", "gumbel-st")
METHOD_NAMES = BASE_METHODS + ("hard-st+cage", "gumbel-st+cage")
DEFAULT_TAU_GRID = [0.05, 0.1, 0.5, 1.0, 2.0]
CAGE_SUFFIX = "+cage"

RUN_FILES = {
    "config": "config.yaml",
    "metrics": "metrics.jsonl",
    "summary": "summary.csv",
    "checkpoint": "checkpoint.npz",
    "circuit": "circuit.txt",
    "status": "run.json",
}


@dataclass
class ExperimentConfig:
    """Everything a run or sweep needs; field names mirror the command-line flags."""
    # dataset
    dataset: str = "mnist-binary"
    data_dir: Optional[str] = None
    binarize: Optional[str] = None
    threshold: float = 0.5
    subset: Optional[int] = 10000
    test_subset: Optional[int] = None
    dims: int = 16
    samples: int = 4096
    test_samples: int = 1024
    data_seed: int = 0
    # architecture
    layers: int = 3
    width: int = 8000
    classes: Optional[int] = None
    # method and temperatures
    method: str = "hard-st"
    tau: float = 1.0
    tau_grid: List[float] = field(default_factory=lambda: list(DEFAULT_TAU_GRID))
    per_sample_noise: bool = False
    cage: Optional[bool] = None
    cage_tau_min: float = 0.5
    cage_tau_max: float = 3.0
    cage_beta: float = 0.99
    # training
    seed: int = 0
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    methods: List[str] = field(default_factory=list)
    iters: int = 10000
    batch: int = 512
    lr: float = 0.01
    eval_every: int = 500
    eval_train_samples: int = 2000
    eval_test_samples: Optional[int] = None
    eval_repeats: int = 1
    # outputs
    out: str = "runs"
    export_circuit: bool = False
    workers: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def resolved_classes(self) -> int:
        if self.classes is not None:
            return self.classes
        return 2 if self.dataset in SYNTHETIC_KINDS else 10

    def method_config(self) -> Tuple[MethodConfig, bool]:
        return parse_method(self.method, self.cage, self.per_sample_noise)

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            name=self.dataset, data_dir=self.data_dir, binarize=self.binarize, threshold=self.threshold,
            subset=self.subset, test_subset=self.test_subset, dims=self.dims, samples=self.samples,
            test_samples=self.test_samples, classes=self.resolved_classes(), seed=self.data_seed,
        )

    def train_config(self) -> TrainConfig:
        method, cage_enabled = self.method_config()
        return TrainConfig(
            method=method, learning_rate=self.lr, batch_size=self.batch, iterations=self.iters,
            eval_every=self.eval_every, tau=self.tau, seed=self.seed, cage_enabled=cage_enabled,
            cage=CageSettings(tau_min=self.cage_tau_min, tau_max=self.cage_tau_max, beta=self.cage_beta),
            eval_train_samples=self.eval_train_samples, eval_test_samples=self.eval_test_samples,
            eval_repeats=self.eval_repeats,
        )

    def run_name(self) -> str:
        return f"{self.method}_tau{self.tau:g}_seed{self.seed}"


CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)}
_ALIASES = {"iterations": "iters", "learning_rate": "lr", "batch_size": "batch", "output": "out", "name": "dataset"}


def parse_method(name: str, cage: Optional[bool] = None, per_sample_noise: bool = False) -> Tuple[MethodConfig, bool]:
    """'gumbel-st+cage' or ('gumbel-st', cage=True) -> (MethodConfig, cage enabled)."""
    if name not in METHOD_NAMES:
        raise ConfigError("method", f"unknown method '{name}'; expected one of {', '.join(METHOD_NAMES)}")
    base = name[:-len(CAGE_SUFFIX)] if name.endswith(CAGE_SUFFIX) else name
    cage_enabled = name.endswith(CAGE_SUFFIX) or bool(cage)
    if name.endswith(CAGE_SUFFIX) and cage is False:
        raise ConfigError("cage", f"'{name}' names CAGE but cage is off")
    method = MethodConfig.from_name(base, per_sample_noise)
    if cage_enabled and not method.is_hard:
        raise ConfigError("cage", f"CAGE applies to hard methods only, not {base}")
    return method, cage_enabled


def _normalize_key(key: str) -> str:
    key = str(key).replace("-", "_")
    return _ALIASES.get(key, key)


def _flatten(raw: Dict[str, Any], section: Optional[str] = None) -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in raw.items():
        key = _normalize_key(key)
        if isinstance(value, dict):
            flat.update(_flatten(value, key))
            continue
        if section and key not in CONFIG_FIELDS and f"{section}_{key}" in CONFIG_FIELDS:
            key = f"{section}_{key}"
        flat[key] = value
    return flat


def _coerce_switch(value: Any) -> Optional[bool]:
    if value is None or isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("on", "true", "yes", "1"):
        return True
    if text in ("off", "false", "no", "0"):
        return False
    raise ConfigError("cage", f"expected on/off, got '{value}'")


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    flat = _flatten(raw or {})
    unknown = sorted(set(flat) - CONFIG_FIELDS)
    if unknown:
        raise ConfigError(unknown[0], f"unknown configuration key (known keys: {', '.join(sorted(CONFIG_FIELDS))})")
    if "cage" in flat:
        flat["cage"] = _coerce_switch(flat["cage"])
    return ExperimentConfig(**flat)


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """YAML file values, then overrides (command-line flags) on top; None overrides are ignored."""
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError("config", f"file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"cannot parse {path}: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config", f"{path} must hold a mapping of keys to values")
        raw = _flatten(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[_normalize_key(key)] = value
    config = config_from_dict(raw)
    validate_config(config)
    return config


def _positive(config: ExperimentConfig, name: str, allow_none: bool = False):
    value = getattr(config, name)
    if value is None and allow_none:
        return
    if value is None or value <= 0:
        raise ConfigError(name, f"must be positive, got {value}")


def validate_config(config: ExperimentConfig):
    """Reject a configuration before any data is read or computed; errors name the field."""
    if config.dataset not in DATASET_NAMES:
        raise ConfigError("dataset", f"unknown dataset '{config.dataset}', expected one of {', '.join(DATASET_NAMES)}")
    config.method_config()
    for name in config.methods:
        parse_method(name, None, config.per_sample_noise)
    for name in ("layers", "width", "batch", "lr", "eval_every", "tau", "workers", "cage_tau_min",
                 "cage_tau_max", "eval_repeats"):
        _positive(config, name)
    for name in ("subset", "test_subset", "eval_test_samples"):
        _positive(config, name, allow_none=True)
    if config.iters < 0:
        raise ConfigError("iters", f"must be >= 0, got {config.iters}")
    if not config.tau_grid or any(t <= 0 for t in config.tau_grid):
        raise ConfigError("tau_grid", f"needs positive temperatures, got {config.tau_grid}")
    if not config.seeds:
        raise ConfigError("seeds", "needs at least one seed")
    classes = config.resolved_classes()
    if config.dataset not in SYNTHETIC_KINDS and classes != 10:
        raise ConfigError("classes", f"{config.dataset} has 10 classes, got {classes}")
    if classes < 2:
        raise ConfigError("classes", f"need at least two classes, got {classes}")
    if config.width % classes != 0:
        raise ConfigError("width", f"width {config.width} is not divisible by {classes} classes")
    config.dataset_spec().validate()
    config.train_config().validate()


def run_summary(config: ExperimentConfig, log: MetricsLog) -> Dict[str, Any]:
    summary: Dict[str, Any] = {"method": config.method, "tau": config.tau, "seed": config.seed,
                               "dataset": config.dataset, "iterations": config.iters, "rows": len(log)}
    if len(log):
        last = log.rows[-1]
        summary.update({
            "train_accuracy": last.train_accuracy,
            "a_method": last.a_method,
            "a_soft": last.a_soft,
            "a_hard": last.a_hard,
            "final_selection_gap": final_gap(log),
            "peak_selection_gap": peak_gap(log),
            "peak_selection_gap_last80": peak_gap(log, window="last80"),
            "final_computation_gap": final_gap(log, "computation_gap"),
            "final_total_gap": final_gap(log, "total_gap"),
            "final_tau_b": last.tau_b,
            "final_confidence": last.confidence,
        })
    return summary


def _write_status(run_dir: Path, payload: Dict[str, Any]):
    payload = {**payload, "timestamp": datetime.now(timezone.utc).isoformat()}
    (run_dir / RUN_FILES["status"]).write_text(json.dumps(payload, indent=2, default=str), encoding="utf-8")


def _write_summary_csv(path: Path, summary: Dict[str, Any]):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(summary))
        writer.writeheader()
        writer.writerow(summary)


def run_experiment(config: ExperimentConfig, run_dir: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    One training run, start to finish.

    Stages: configuration validation, data loading, network build, training and
    artifact writing. The run directory receives config.yaml, metrics.jsonl,
    summary.csv, checkpoint.npz, optionally circuit.txt, and run.json with the
    final status. Failures come back as a result dictionary, never as an exception.
    """
    start = datetime.now(timezone.utc)
    stage = "config_validation"
    run_dir = Path(run_dir) if run_dir is not None else Path(config.out) / config.run_name()
    try:
        validate_config(config)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / RUN_FILES["config"]).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True), encoding="utf-8")

        stage = "data_loading"
        logger.info("Loading dataset %s...", config.dataset)
        train_set, test_set = load_dataset(config.dataset_spec(), resolve_data_dir(config_value=config.data_dir))
        logger.info("Loaded %d train / %d test samples with %d features", len(train_set), len(test_set), train_set.dims)

        stage = "network_build"
        logger.info("Building network (%d x %d)...", config.layers, config.width)
        arch = Architecture(input_width=train_set.dims, layers=config.layers, width=config.width,
                            classes=config.resolved_classes())
        network = build_network(arch, config.seed)

        stage = "training"
        logger.info("Training %s at tau=%g, seed %d...", config.method, config.tau, config.seed)
        metrics_path = run_dir / RUN_FILES["metrics"]
        metrics_path.write_text("", encoding="utf-8")

        def stream_row(row):
            with open(metrics_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(asdict(row)) + "\n")

        log = train(config.train_config(), train_set, test_set, network, callback=stream_row)

        stage = "artifacts"
        logger.info("Writing artifacts to %s...", run_dir)
        log.to_jsonl(metrics_path)
        summary = run_summary(config, log)
        _write_summary_csv(run_dir / RUN_FILES["summary"], summary)
        save_checkpoint(network, run_dir / RUN_FILES["checkpoint"])
        circuit_report = None
        if config.export_circuit:
            circuit = extract_circuit(network)
            save_circuit(circuit, run_dir / RUN_FILES["circuit"])
            circuit_report = verify_equivalence(circuit, network, samples=1000, seed=config.seed).summary()

        duration = (datetime.now(timezone.utc) - start).total_seconds()
        result = {
            "success": True,
            "stage": "completed",
            "run_dir": str(run_dir),
            "duration_seconds": duration,
            "summary": summary,
            "circuit": circuit_report,
        }
        _write_status(run_dir, {"status": "completed", **result})
        logger.info("Run completed in %.1f seconds", duration)
        return result

    except (LGNError, ValueError, OSError) as exc:
        logger.error("Run failed during %s: %s", stage, exc)
        result = error_result(exc, stage)
        result["run_dir"] = str(run_dir)
        if run_dir.exists():
            _write_status(run_dir, {"status": "failed", **result})
        return result


def main(config_path: Optional[str] = None, run_dir: Optional[str] = None, **overrides) -> Dict[str, Any]:
    """Load a configuration (file plus keyword overrides) and run it."""
    try:
        config = load_config(config_path, overrides)
    except LGNError as exc:
        return error_result(exc, "config_validation")
    return run_experiment(config, run_dir)
