"""
Exception hierarchy shared by every toolkit module.

Each error type maps to a stable category code through ERROR_CATEGORIES so
that the task layer can report failures without leaking internals.
"""

import logging
from typing import Any, Dict, Optional, Tuple, Type

logger = logging.getLogger(__name__)


class ToolkitError(Exception):
    """Base class for all toolkit errors."""

    pass


class DataError(ToolkitError):
    """Raised when input data is missing, malformed or inconsistent."""

    def __init__(
        self,
        message: str,
        row: Optional[int] = None,
        ticker: Optional[str] = None,
    ):
        self.row = row
        self.ticker = ticker
        location = []
        if row is not None:
            location.append(f"row {row}")
        if ticker is not None:
            location.append(f"ticker {ticker}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")


class ConfigError(ToolkitError):
    """Raised for invalid configuration or hyperparameters."""

    pass


class DimensionError(ToolkitError):
    """Raised when tensor shapes do not line up."""

    pass


class ContractError(ToolkitError):
    """Raised when a caller violates an operation's precondition."""

    pass


class NonFiniteError(ToolkitError):
    """Raised when an engine op produces NaN or Inf."""

    pass


class UndefinedMetricError(ToolkitError):
    """Raised when a metric is undefined for the given data (e.g. zero volatility)."""

    pass


class TrainingDivergedError(ToolkitError):
    """Raised when a training loss stops being finite."""

    def __init__(self, message: str, step: int, components: Dict[str, float]):
        self.step = step
        self.components = components
        detail = ", ".join(f"{k}={v!r}" for k, v in components.items())
        super().__init__(f"{message} at step {step}: {detail}")


class LookAheadError(ToolkitError):
    """Raised when a backtest decision uses data from its own realization date."""

    pass


# Category codes reported in failed command results
ERROR_CATEGORIES: Dict[Type[ToolkitError], Tuple[str, str]] = {
    DataError: ("data_error", "Input data is invalid"),
    ConfigError: ("config_error", "Configuration is invalid"),
    DimensionError: ("dimension_error", "Tensor shapes are inconsistent"),
    ContractError: ("contract_error", "Operation precondition violated"),
    NonFiniteError: ("numerical_error", "Computation produced non-finite values"),
    UndefinedMetricError: ("undefined_metric", "Metric is undefined for this data"),
    TrainingDivergedError: ("training_diverged", "Training diverged"),
    LookAheadError: ("look_ahead", "Backtest used future information"),
}

UNKNOWN_CATEGORY = ("internal_error", "An unexpected error occurred")


def categorize_error(error: BaseException) -> Tuple[str, str]:
    """Return (category code, user message) for an exception."""
    for error_type in type(error).__mro__:
        if error_type in ERROR_CATEGORIES:
            return ERROR_CATEGORIES[error_type]
    return UNKNOWN_CATEGORY


def create_error_response(command: str, error: BaseException) -> Dict[str, Any]:
    """
    Build a standardized failure result for a command.

    The detailed error is logged; the response carries the category code,
    the user-facing message and the error text.
    """
    category, message = categorize_error(error)
    if category == UNKNOWN_CATEGORY[0]:
        logger.error(f"{command} failed: {error}", exc_info=True)
    else:
        logger.error(f"{command} failed ({category}): {error}")

    return {
        "success": False,
        "command": command,
        "error_type": category,
        "error": f"{message}: {error}",
    }
