"""
Error Handling
Exception hierarchy for the gaze pipeline and a central handler that maps
failures to exit codes and log messages.
"""

import logging
import threading
import traceback
from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, List, Optional

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class GazeError(Exception):
    """Base class for every error raised by the gaze package."""

    exit_code = EXIT_DATA


# Configuration

class ConfigError(GazeError):
    """Invalid or unresolvable configuration."""

    exit_code = EXIT_USAGE


# Data

class DataError(GazeError):
    """Problem with input data or model artifacts."""

    exit_code = EXIT_DATA


class MalformedRecord(DataError):
    """A dataset line could not be parsed into a frame."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class WrongKeypointCount(MalformedRecord):
    """A frame does not carry exactly the canonical keypoints."""


class NoValidKeypoints(DataError):
    """No keypoint has a positive confidence."""


class DegenerateGeometry(DataError):
    """Valid keypoints collapse to a single point."""


class DegenerateTarget(DataError):
    """The gaze target coincides with the head centroid."""


class TooFewSubjects(DataError):
    """Not enough distinct subjects to split."""


class TooFewSamples(DataError):
    """Not enough samples per class for cross-validation."""


class MissingClass(DataError):
    """A required class has no samples."""

    def __init__(self, message: str, missing: Optional[List[str]] = None):
        self.missing = list(missing or [])
        super().__init__(message)


class EmptyBatch(DataError):
    """A loss was requested on zero samples."""


class LengthMismatch(DataError):
    """Aligned sequences have different lengths."""


class NoWorkspaceFrames(DataError):
    """No frame is both labelled and predicted as workspace."""


class ModelMissing(DataError):
    """A model file required by a command does not exist or cannot be read."""


class GeometryError(DataError):
    """Geometric precondition violated."""


class NonPositiveDepth(GeometryError):
    """A point lies on or behind the camera plane."""


class ZeroVector(GeometryError):
    """A direction vector has zero length."""


class InvalidCamera(GeometryError):
    """Camera intrinsics violate their invariants."""


class UnknownMarker(GeometryError):
    """Marker id is not part of the board layout."""


# Numerical

class NumericalError(GazeError):
    """Optimisation failed to produce a usable model."""

    exit_code = EXIT_NUMERICAL


class NonConvergence(NumericalError):
    """SMO hit its iteration budget before satisfying the KKT tolerance."""

    def __init__(self, message: str, violation: float = float("nan"), iterations: int = 0):
        self.violation = violation
        self.iterations = iterations
        super().__init__(f"{message} (iterations={iterations}, kkt_violation={violation:.3e})")


class NonFiniteLoss(NumericalError):
    """Training loss became NaN or infinite."""

    def __init__(self, message: str, epoch: int = -1):
        self.epoch = epoch
        super().__init__(f"{message} (epoch {epoch})")


@dataclass
class ErrorRecord:
    """One handled error, kept for the run summary."""
    context: str
    error_type: str
    message: str
    exit_code: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            'context': self.context,
            'error_type': self.error_type,
            'message': self.message,
            'exit_code': self.exit_code,
        }


class ErrorHandler:
    """Global error handler: classifies exceptions, logs them and keeps recent history."""

    def __init__(self, max_logs: int = 100):
        self.error_logs: Deque[ErrorRecord] = deque(maxlen=max_logs)
        self.counts: Dict[str, int] = {}
        self._lock = threading.Lock()

    def handle(self, error: BaseException, context: str = "") -> int:
        """Log an error and return the process exit code it maps to."""
        if isinstance(error, ConfigError):
            code = self._handle_config_error(error, context)
        elif isinstance(error, NumericalError):
            code = self._handle_numerical_error(error, context)
        elif isinstance(error, GazeError):
            code = self._handle_data_error(error, context)
        elif isinstance(error, (OSError, ValueError)):
            code = self._handle_io_error(error, context)
        else:
            code = self._handle_unknown_error(error, context)

        record = ErrorRecord(context, type(error).__name__, str(error), code)
        with self._lock:
            self.error_logs.append(record)
            self.counts[record.error_type] = self.counts.get(record.error_type, 0) + 1
        return code

    def failure_message(self, error: BaseException) -> str:
        """Short message stored in per-frame failure records."""
        return f"{type(error).__name__}: {error}"

    def summary(self) -> Dict[str, int]:
        with self._lock:
            return dict(sorted(self.counts.items()))

    def _handle_config_error(self, error: ConfigError, context: str) -> int:
        logger.error(f"Configuration error{self._where(context)}: {error}")
        return error.exit_code

    def _handle_data_error(self, error: GazeError, context: str) -> int:
        logger.error(f"Data error{self._where(context)}: {type(error).__name__}: {error}")
        return error.exit_code

    def _handle_numerical_error(self, error: NumericalError, context: str) -> int:
        logger.error(f"Numerical failure{self._where(context)}: {type(error).__name__}: {error}")
        return error.exit_code

    def _handle_io_error(self, error: BaseException, context: str) -> int:
        logger.error(f"I/O error{self._where(context)}: {error}")
        return EXIT_DATA

    def _handle_unknown_error(self, error: BaseException, context: str) -> int:
        logger.error(f"Unexpected error{self._where(context)}: {type(error).__name__}: {error}")
        logger.error(traceback.format_exc())
        return EXIT_DATA

    @staticmethod
    def _where(context: str) -> str:
        return f" in {context}" if context else ""
