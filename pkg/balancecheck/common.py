"""Common base class and utilities shared by the solver, estimates and harness."""

import logging
import math
from collections.abc import Iterable
from pathlib import Path
from typing import Any

import numpy as np
from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError

logger = logging.getLogger("balancecheck")


class BalanceCheckError(Exception):
    """Base class for every error raised by balancecheck."""


class ConfigError(BalanceCheckError):
    """Scenario or settings file is malformed.

    Args:
        message: What is wrong
        field: Dotted path of the offending field ("grid.cells")
        line: 1-based source line of the enclosing mapping, if known
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.message = message
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class CatalogError(BalanceCheckError):
    """Unknown catalog identifier."""


class GridError(BalanceCheckError):
    """Invalid grid or mismatched grids."""


class NonCompactSupportError(BalanceCheckError):
    """Field has nonzero values on its outer margin layer."""


class NonLatticeShiftError(BalanceCheckError):
    """Shift vector is not an integer multiple of the grid spacing."""


class SubGridScaleError(BalanceCheckError):
    """Smoothing scale below twice the grid spacing."""


class ProfileError(BalanceCheckError):
    """Invalid mollifier profile request."""


class QuadratureError(BalanceCheckError):
    """Quadrature did not reach its tolerance."""


class SamplingError(BalanceCheckError):
    """Non-finite value met while probing a model."""


class MissingDerivativeError(BalanceCheckError):
    """A derivative required by a hypothesis set is not available."""


class PreconditionError(BalanceCheckError):
    """An estimate was requested outside its applicability conditions."""


class SupportBoundaryError(BalanceCheckError):
    """Solution support reached the padded boundary of the grid."""


class ConvergenceInputError(BalanceCheckError):
    """Resolution ladder unusable for an order estimate."""


class Component:
    """Base class for stateful runners with prefixed logging helpers."""

    def debug(self, message: str):
        """Log debug message with class name prefix."""
        logger.debug(f"[{self.__class__.__name__}] {message}")

    def info(self, message: str):
        """Log info message with class name prefix."""
        logger.info(f"[{self.__class__.__name__}] {message}")

    def warning(self, message: str):
        """Log warning message with class name prefix."""
        logger.warning(f"[{self.__class__.__name__}] {message}")


def compensated_sum(values: Iterable[float] | np.ndarray) -> float:
    """Exactly rounded sum in a fixed (C-order) reduction order."""
    if isinstance(values, np.ndarray):
        return math.fsum(values.ravel().tolist())
    return math.fsum(values)


def load_yaml(path: Path) -> Any:
    """Load a YAML (or JSON) document keeping line information.

    Raises:
        ConfigError: unreadable file or syntax error, with the offending line
    """
    yaml = YAML(typ="rt")
    try:
        with open(path, encoding="utf-8") as fh:
            return yaml.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"cannot parse {path}: {getattr(e, 'problem', e)}", line=line) from e


def mapping_line(node: Any) -> int | None:
    """1-based line of a round-trip YAML mapping, when available."""
    lc = getattr(node, "lc", None)
    if lc is None or lc.line is None:
        return None
    return lc.line + 1
