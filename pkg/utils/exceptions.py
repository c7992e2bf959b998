# utils/exceptions.py

from enum import Enum
from typing import Any, Dict, Optional

import typer


class LabErrorReason(str, Enum):
    """Enum for the ways a lab operation can refuse its input"""
    NON_FINITE = "non_finite"
    SHAPE_MISMATCH = "shape_mismatch"
    INVALID_ARGUMENT = "invalid_argument"
    SEQUENCE_TOO_SHORT = "sequence_too_short"
    SEQUENCE_TOO_LONG = "sequence_too_long"
    SAMPLE_TOO_LONG = "sample_too_long"
    EMPTY_INPUT = "empty_input"
    CACHE_MISS = "cache_miss"
    NON_SIMPLEX = "non_simplex"
    POOL_EXHAUSTED = "pool_exhausted"
    MISSING_CALIBRATION = "missing_calibration"
    TOO_FEW_RUNS = "too_few_runs"
    CONFIG_ERROR = "config_error"
    VALIDATION_FAILED = "validation_failed"


class LabError(Exception):
    """Exception raised when a lab operation rejects its input or state"""

    # Process exit code mapping
    EXIT_CODES = {
        LabErrorReason.CONFIG_ERROR: 2,
        LabErrorReason.VALIDATION_FAILED: 1,
    }

    # Error message mapping
    ERROR_MESSAGES = {
        LabErrorReason.NON_FINITE: "Non-finite value (NaN or Inf) produced by a forward op.",
        LabErrorReason.SHAPE_MISMATCH: "Operand shapes are incompatible.",
        LabErrorReason.INVALID_ARGUMENT: "Argument outside its allowed range.",
        LabErrorReason.SEQUENCE_TOO_SHORT: "Sequence has no prediction positions.",
        LabErrorReason.SEQUENCE_TOO_LONG: "Sequence exceeds the model's maximum length.",
        LabErrorReason.SAMPLE_TOO_LONG: "Sample longer than the pack length; samples are never truncated.",
        LabErrorReason.EMPTY_INPUT: "Input is empty.",
        LabErrorReason.CACHE_MISS: "Reference log-probabilities were not precomputed for this response.",
        LabErrorReason.NON_SIMPLEX: "Marginals must be nonnegative and sum to one.",
        LabErrorReason.POOL_EXHAUSTED: "Calibration pool exhausted before every expert reached the minimum count.",
        LabErrorReason.MISSING_CALIBRATION: "An expert has no calibration statistics.",
        LabErrorReason.TOO_FEW_RUNS: "Not enough valid proxy runs.",
        LabErrorReason.CONFIG_ERROR: "Invalid experiment configuration.",
        LabErrorReason.VALIDATION_FAILED: "Validation failed.",
    }

    def __init__(self, reason: LabErrorReason, detail: str = None, **context: Any):
        self.reason = reason
        self.exit_code = self.EXIT_CODES.get(reason, 1)
        self.detail = detail or self.ERROR_MESSAGES.get(reason)
        self.context: Dict[str, Any] = context
        super().__init__(f"{reason.value}: {self.detail}")

    def to_dict(self) -> Dict[str, Any]:
        error_detail: Dict[str, Any] = {
            "error": self.reason.value,
            "detail": self.detail,
        }
        if self.context:
            error_detail.update({k: v for k, v in self.context.items()})
        return error_detail

    def to_exit(self) -> typer.Exit:
        """Convert to the CLI exit signal"""
        return typer.Exit(code=self.exit_code)


def require(condition: bool, reason: LabErrorReason, detail: Optional[str] = None, **context: Any) -> None:
    if not condition:
        raise LabError(reason, detail, **context)
