"""
Command-line entry point.

    python lgn-scripts/cli.py run --method hard-st --dataset mnist-binary --tau 1.0 --seed 0
    python lgn-scripts/cli.py sweep --config sweep.yaml --workers 4
    python lgn-scripts/cli.py report runs/manifest.json
    python lgn-scripts/cli.py export-circuit runs/hard-st_tau1_seed0/checkpoint.npz
    python lgn-scripts/cli.py verify-circuit circuit.txt checkpoint.npz
    python lgn-scripts/cli.py pixel-report --dataset mnist --data-dir ~/data/mnist

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 numeric abort.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from circuit import benchmark_bitpacked, extract_circuit, load_circuit, save_circuit, verify_equivalence
from data_loader import DatasetSpec, load_dataset, resolve_data_dir
from data_transformer import pixel_distribution_report
from error_handler import EXIT_CONFIG, EXIT_DATA, EXIT_OK, LGNError, error_result
from experiment_flow import METHOD_NAMES, load_config, run_experiment
from metrics import computation_gap_by_gate
from network import load_checkpoint
from report_builder import build_report
from sweep_runner import run_sweep

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are configuration errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def setup_logging(level: str = "INFO"):
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _str_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_experiment_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="YAML config file; flags override its values")
    parser.add_argument("--method", help=f"one of {', '.join(METHOD_NAMES)}")
    parser.add_argument("--dataset", help="mnist, mnist-binary, cifar10-binary, parity, two-moons, teacher-circuit")
    parser.add_argument("--data-dir", help="dataset directory (falls back to $LGN_DATA_DIR)")
    parser.add_argument("--binarize", help="none, threshold or thermometer")
    parser.add_argument("--subset", type=int, help="train subset size")
    parser.add_argument("--test-subset", type=int, help="test subset size")
    parser.add_argument("--dims", type=int, help="input bits of synthetic tasks")
    parser.add_argument("--samples", type=int, help="train samples of synthetic tasks")
    parser.add_argument("--layers", type=int)
    parser.add_argument("--width", type=int)
    parser.add_argument("--classes", type=int)
    parser.add_argument("--tau", type=float, help="temperature (backward-only for hard methods)")
    parser.add_argument("--tau-grid", type=_float_list, help="comma-separated temperatures for sweeps")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--seeds", type=_int_list, help="comma-separated seeds for sweeps")
    parser.add_argument("--methods", type=_str_list, help="comma-separated methods for sweeps")
    parser.add_argument("--iters", type=int)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--cage", help="on or off")
    parser.add_argument("--cage-tau-min", type=float)
    parser.add_argument("--cage-tau-max", type=float)
    parser.add_argument("--cage-beta", type=float)
    parser.add_argument("--per-sample-noise", action="store_true", default=None,
                        help="draw Gumbel noise per example instead of per step")
    parser.add_argument("--eval-every", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--export-circuit", action="store_true", default=None)


_EXPERIMENT_KEYS = (
    "method", "dataset", "data_dir", "binarize", "subset", "test_subset", "dims", "samples", "layers", "width",
    "classes", "tau", "tau_grid", "seed", "seeds", "methods", "iters", "batch", "lr", "cage", "cage_tau_min",
    "cage_tau_max", "cage_beta", "per_sample_noise", "eval_every", "out", "export_circuit",
)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lgn", description="Train logic gate networks and measure their deployment gap.")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="train one configuration")
    _add_experiment_flags(run)
    run.add_argument("--run-dir", help="explicit run directory")

    sweep = sub.add_parser("sweep", help="train the method x tau x seed grid")
    _add_experiment_flags(sweep)
    sweep.add_argument("--workers", type=int)

    report = sub.add_parser("report", help="aggregate a sweep manifest into tables")
    report.add_argument("manifest", help="manifest.json or the sweep directory")
    report.add_argument("--out", help="output directory (default: next to the manifest)")
    report.add_argument("--accuracy", default="a_hard", help="accuracy column for the tables")

    export = sub.add_parser("export-circuit", help="extract the hard circuit from a checkpoint")
    export.add_argument("checkpoint")
    export.add_argument("--out", help="circuit file (default: circuit.txt next to the checkpoint)")
    export.add_argument("--verify-samples", type=int, default=10000)
    export.add_argument("--benchmark", action="store_true")

    verify = sub.add_parser("verify-circuit", help="check a circuit file against a checkpoint")
    verify.add_argument("circuit")
    verify.add_argument("checkpoint")
    verify.add_argument("--samples", type=int, default=10000)
    verify.add_argument("--seed", type=int, default=0)

    pixels = sub.add_parser("pixel-report", help="input value distribution and per-gate computation gap")
    pixels.add_argument("--dataset", default="mnist")
    pixels.add_argument("--data-dir")
    pixels.add_argument("--subset", type=int)
    pixels.add_argument("--gates", action="store_true", help="also estimate every gate's computation gap")
    pixels.add_argument("--gap-samples", type=int, default=100000)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, key, None) for key in _EXPERIMENT_KEYS}


def _print_result(result: Dict[str, Any]):
    printable = {k: v for k, v in result.items() if k not in ("report", "text")}
    print(json.dumps(printable, indent=2, default=str))
    for key in ("report", "text"):
        if result.get(key):
            print(result[key])


def cmd_run(args) -> Dict[str, Any]:
    config = load_config(args.config, _overrides(args))
    return run_experiment(config, args.run_dir)


def cmd_sweep(args) -> Dict[str, Any]:
    config = load_config(args.config, _overrides(args))
    return run_sweep(config, workers=args.workers)


def cmd_report(args) -> Dict[str, Any]:
    return build_report(args.manifest, args.out, args.accuracy)


def cmd_export_circuit(args) -> Dict[str, Any]:
    checkpoint = Path(args.checkpoint)
    network = load_checkpoint(checkpoint)
    circuit = extract_circuit(network)
    out = Path(args.out) if args.out else checkpoint.with_name("circuit.txt")
    save_circuit(circuit, out)
    report = verify_equivalence(circuit, network, samples=args.verify_samples)
    result = {"success": report.passed, "stage": "export_circuit", "circuit": str(out),
              "gates": circuit.gate_count, "verification": report.summary()}
    if args.benchmark:
        result["benchmark"] = benchmark_bitpacked(circuit, network)
    if not report.passed:
        result.update({"error": report.summary(), "exit_code": EXIT_DATA})
    return result


def cmd_verify_circuit(args) -> Dict[str, Any]:
    circuit = load_circuit(args.circuit)
    network = load_checkpoint(args.checkpoint)
    report = verify_equivalence(circuit, network, samples=args.samples, seed=args.seed)
    result = {"success": report.passed, "stage": "verify_circuit", "verification": report.summary(),
              "first_mismatch": report.first_mismatch}
    if not report.passed:
        result.update({"error": report.summary(), "exit_code": EXIT_DATA})
    return result


def cmd_pixel_report(args) -> Dict[str, Any]:
    spec = DatasetSpec(name=args.dataset, data_dir=args.data_dir, binarize="none", subset=args.subset)
    train_set, _ = load_dataset(spec, resolve_data_dir(args.data_dir))
    report = pixel_distribution_report(train_set.features)
    result = {"success": True, "stage": "pixel_report", "distribution": report.as_percent(),
              "text": report.render()}
    if args.gates:
        result["computation_gap_by_gate"] = computation_gap_by_gate(train_set.features, args.gap_samples)
    return result


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "export-circuit": cmd_export_circuit,
    "verify-circuit": cmd_verify_circuit,
    "pixel-report": cmd_pixel_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        result = COMMANDS[args.command](args)
    except (LGNError, ValueError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        result = error_result(exc, args.command)
    _print_result(result)
    if result.get("success"):
        return EXIT_OK
    return int(result.get("exit_code", EXIT_CONFIG))


if __name__ == "__main__":
    sys.exit(main())
