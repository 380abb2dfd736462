"""File-and-subprocess adapter for the layoutforge CLI."""

from .exchange import ExchangeFormatError, export_tensor, import_tensor
from .session import (
    BridgeEnvironmentError,
    BridgeError,
    BridgeSession,
    StepConfig,
    StepResult,
    parse_report,
)

__version__ = "0.1.0"
