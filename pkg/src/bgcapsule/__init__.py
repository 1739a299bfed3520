"""BiGRU-ensemble capsule network for text classification.

Everything runs on the package's own numpy-backed gradient tape; no
deep-learning framework is required. See the README for the CLI and
the data formats.
"""

from .errors import (
    BgcError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    ModelDataMismatch,
    ParseError,
)
from .tensor import Tape, Tensor, grad_check

__all__ = [
    "BgcError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "ModelDataMismatch",
    "ParseError",
    "Tape",
    "Tensor",
    "grad_check",
]

__version__ = "0.1.0"
