import json
from typing import Dict, Any, List, Optional
from dataclasses import dataclass, asdict, field
from datetime import datetime, timezone
from enum import Enum


class ErrorSeverity(Enum):
    CRITICAL = "critical"
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    INFO = "info"


class ErrorCategory(Enum):
    CONFIG = "config"
    DATA = "data"
    NUMERIC = "numeric"
    CIRCUIT = "circuit"
    SYSTEM = "system"


# Process exit codes used by the command-line runner.
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class LGNError(Exception):
    """Base error carrying a category, structured details and a process exit code."""

    category = ErrorCategory.SYSTEM
    exit_code = EXIT_CONFIG
    error_code = "LGN_ERROR"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ConfigError(LGNError, ValueError):
    """Invalid configuration; the message names the offending field."""

    category = ErrorCategory.CONFIG
    exit_code = EXIT_CONFIG
    error_code = "CONFIG_ERROR"

    def __init__(self, field_name: str, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(f"{field_name}: {message}", details)
        self.field_name = field_name


class ShapeError(LGNError, ValueError):
    category = ErrorCategory.SYSTEM
    exit_code = EXIT_CONFIG
    error_code = "SHAPE_ERROR"


class DataError(LGNError):
    category = ErrorCategory.DATA
    exit_code = EXIT_DATA
    error_code = "DATA_ERROR"


class IdxMagicError(DataError):
    error_code = "IDX_BAD_MAGIC"


class IdxTruncatedError(DataError):
    error_code = "IDX_TRUNCATED"


class IdxDimensionError(DataError):
    error_code = "IDX_DIMENSION_OVERFLOW"


class LabelRangeError(DataError):
    error_code = "LABEL_RANGE"


class NumericAbortError(LGNError):
    """Training produced non-finite logits, loss or gradients; details hold step, tau_b and logit norms."""

    category = ErrorCategory.NUMERIC
    exit_code = EXIT_NUMERIC
    error_code = "NUMERIC_ABORT"


class CircuitError(LGNError):
    category = ErrorCategory.CIRCUIT
    exit_code = EXIT_CONFIG
    error_code = "CIRCUIT_ERROR"


@dataclass
class ErrorRecord:
    """Individual error record with context and metadata."""
    timestamp: str
    severity: ErrorSeverity
    category: ErrorCategory
    message: str
    details: Dict[str, Any]
    cell: Optional[Dict[str, Any]] = None
    run_dir: Optional[str] = None
    error_code: Optional[str] = None
    recoverable: bool = True


@dataclass
class SweepReport:
    """Outcome of a sweep: cell statistics plus every recorded error."""
    sweep_id: str
    start_time: str
    end_time: str
    duration_seconds: float

    total_cells: int
    completed_cells: int
    skipped_cells: int
    failed_cells: int

    errors: List[ErrorRecord]
    warnings: List[Dict[str, Any]] = field(default_factory=list)

    overall_success: bool = True
    success_rate: float = 0.0


def _now() -> datetime:
    return datetime.now(timezone.utc)


class ErrorHandler:
    """
    Tracks failures across the cells of a sweep and turns them into a report.
    A failed cell never aborts the sweep; it is recorded here instead.
    """

    def __init__(self, sweep_id: Optional[str] = None):
        self.errors: List[ErrorRecord] = []
        self.warnings: List[Dict[str, Any]] = []
        self.start_time = _now()
        self.sweep_id = sweep_id or f"sweep_{int(self.start_time.timestamp())}"

    def add_error(
        self,
        message: str,
        category: ErrorCategory,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        details: Dict[str, Any] = None,
        cell: Optional[Dict[str, Any]] = None,
        run_dir: Optional[str] = None,
        error_code: Optional[str] = None,
        recoverable: bool = True
    ):
        """Add an error record to the handler."""
        self.errors.append(ErrorRecord(
            timestamp=_now().isoformat(),
            severity=severity,
            category=category,
            message=message,
            details=details or {},
            cell=cell,
            run_dir=run_dir,
            error_code=error_code,
            recoverable=recoverable
        ))

    def add_warning(self, message: str, details: Dict[str, Any] = None):
        self.warnings.append({
            "timestamp": _now().isoformat(),
            "message": message,
            "details": details or {}
        })

    def handle_run_failure(self, error: Dict[str, Any], cell: Dict[str, Any], run_dir: Optional[str] = None):
        """Record a failed run from the result dictionary a run returns."""
        category_value = error.get("category", ErrorCategory.SYSTEM.value)
        try:
            category = ErrorCategory(category_value)
        except ValueError:
            category = ErrorCategory.SYSTEM

        severity = ErrorSeverity.HIGH
        if category == ErrorCategory.NUMERIC:
            # numeric aborts are an experimental outcome, not a broken sweep
            severity = ErrorSeverity.MEDIUM
        elif category == ErrorCategory.SYSTEM:
            severity = ErrorSeverity.CRITICAL

        self.add_error(
            message=f"Run failed for {cell.get('method')} tau={cell.get('tau')} seed={cell.get('seed')}: "
                    f"{error.get('error', 'unknown error')}",
            category=category,
            severity=severity,
            details=error.get("details", {}),
            cell=cell,
            run_dir=run_dir,
            error_code=error.get("error_code", "RUN_ERROR"),
            recoverable=category != ErrorCategory.SYSTEM
        )

    def handle_exception(self, exc: BaseException, cell: Optional[Dict[str, Any]] = None,
                         run_dir: Optional[str] = None):
        """Record an exception raised outside a run's own error reporting."""
        if isinstance(exc, LGNError):
            self.add_error(
                message=exc.message,
                category=exc.category,
                severity=ErrorSeverity.HIGH,
                details=exc.details,
                cell=cell,
                run_dir=run_dir,
                error_code=exc.error_code
            )
        else:
            self.add_error(
                message=f"{type(exc).__name__}: {exc}",
                category=ErrorCategory.SYSTEM,
                severity=ErrorSeverity.CRITICAL,
                cell=cell,
                run_dir=run_dir,
                error_code="SYSTEM_ERROR",
                recoverable=False
            )

    def get_error_summary(self) -> Dict[str, Any]:
        """Get summary of errors by category, severity and code."""
        summary = {
            "total_errors": len(self.errors),
            "total_warnings": len(self.warnings),
            "by_category": {},
            "by_severity": {},
            "by_error_code": {}
        }

        for error in self.errors:
            category = error.category.value
            summary["by_category"][category] = summary["by_category"].get(category, 0) + 1

            severity = error.severity.value
            summary["by_severity"][severity] = summary["by_severity"].get(severity, 0) + 1

            if error.error_code:
                summary["by_error_code"][error.error_code] = summary["by_error_code"].get(error.error_code, 0) + 1

        return summary

    def get_failed_cells(self) -> List[Dict[str, Any]]:
        failed = []
        for error in self.errors:
            if error.cell is not None:
                failed.append({
                    "cell": error.cell,
                    "run_dir": error.run_dir,
                    "error_message": error.message,
                    "error_category": error.category.value,
                    "error_severity": error.severity.value,
                    "error_code": error.error_code,
                    "recoverable": error.recoverable
                })
        return failed

    def generate_report(self, cell_stats: Dict[str, int]) -> SweepReport:
        end_time = _now()
        duration = (end_time - self.start_time).total_seconds()

        total = cell_stats.get("total_cells", 0)
        completed = cell_stats.get("completed_cells", 0)
        skipped = cell_stats.get("skipped_cells", 0)
        failed = cell_stats.get("failed_cells", 0)

        success_rate = ((completed + skipped) / total * 100) if total > 0 else 0.0
        overall_success = (
            len(self.errors) == 0 or
            all(error.severity in [ErrorSeverity.LOW, ErrorSeverity.INFO] for error in self.errors)
        )

        return SweepReport(
            sweep_id=self.sweep_id,
            start_time=self.start_time.isoformat(),
            end_time=end_time.isoformat(),
            duration_seconds=duration,
            total_cells=total,
            completed_cells=completed,
            skipped_cells=skipped,
            failed_cells=failed,
            errors=list(self.errors),
            warnings=list(self.warnings),
            overall_success=overall_success,
            success_rate=success_rate
        )

    def export_report(self, report: SweepReport, format: str = "json") -> str:
        if format == "json":
            report_dict = asdict(report)
            for error in report_dict["errors"]:
                error["severity"] = error["severity"].value
                error["category"] = error["category"].value
            return json.dumps(report_dict, indent=2, default=str)

        elif format == "summary":
            return self._generate_text_summary(report)

        else:
            raise ValueError(f"Unsupported export format: {format}")

    def _generate_text_summary(self, report: SweepReport) -> str:
        summary_lines = [
            f"Sweep Report - {report.sweep_id}",
            f"Duration: {report.duration_seconds:.2f} seconds",
            "",
            "=== CELLS ===",
            f"Total: {report.total_cells}",
            f"Completed: {report.completed_cells}",
            f"Skipped (already complete): {report.skipped_cells}",
            f"Failed: {report.failed_cells}",
            f"Success Rate: {report.success_rate:.1f}%",
            f"Overall Success: {'YES' if report.overall_success else 'NO'}",
            ""
        ]

        if report.errors:
            error_summary = self.get_error_summary()
            summary_lines.extend([
                "=== ERROR SUMMARY ===",
                f"Total Errors: {error_summary['total_errors']}",
                ""
            ])
            if error_summary["by_category"]:
                summary_lines.append("Errors by Category:")
                for category, count in sorted(error_summary["by_category"].items()):
                    summary_lines.append(f"  - {category}: {count}")
                summary_lines.append("")
            summary_lines.append("Failed Cells:")
            for error in report.errors:
                summary_lines.append(f"  - {error.message}")
            summary_lines.append("")

        if report.warnings:
            summary_lines.extend([
                "=== WARNINGS ===",
                *[f"- {warning['message']}" for warning in report.warnings],
                ""
            ])

        return "\n".join(summary_lines)


def error_result(exc: BaseException, stage: str) -> Dict[str, Any]:
    """Convert an exception into the result dictionary returned by flow scripts."""
    if isinstance(exc, LGNError):
        return {
            "success": False,
            "stage": stage,
            "error": exc.message,
            "error_code": exc.error_code,
            "category": exc.category.value,
            "exit_code": exc.exit_code,
            "details": exc.details
        }
    return {
        "success": False,
        "stage": stage,
        "error": f"{type(exc).__name__}: {exc}",
        "error_code": "SYSTEM_ERROR",
        "category": ErrorCategory.SYSTEM.value,
        "exit_code": EXIT_CONFIG,
        "details": {}
    }
