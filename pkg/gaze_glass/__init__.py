# flake8: noqa
from .exceptions import (
    AccumulationError, ConfigError, ContractError, FormatError, GlassError, InsufficientDataError, NumericError,
    ParseError, ReportError, RunLockError, RunLockTimeoutError, SchemaError, ShapeError,
)
from .version import __version__
