"""
GeoFlow: Error Types
====================
Exception hierarchy shared by the integrators, the training driver and the CLI.
The CLI maps usage errors to exit code 1 and numerical failures to exit code 2.
"""

from typing import Iterable, Optional

import numpy as np


class GeoFlowError(Exception):
    """Base class for all GeoFlow errors."""


class UsageError(GeoFlowError, ValueError):
    """Invalid arguments, unknown kinds, mismatched meshes."""


class SchemaError(UsageError):
    """
    Malformed configuration.

    Args:
        message: Human readable description
        keys: Offending configuration keys
    """

    def __init__(self, message: str, keys: Iterable[str] = ()):
        self.keys = sorted(set(keys))
        if self.keys:
            message = f"{message} (offending keys: {', '.join(self.keys)})"
        super().__init__(message)


class UnsupportedOrderError(UsageError):
    """Generating-series order outside the supported range."""


class ArtifactIOError(GeoFlowError, OSError):
    """Reading or writing a run artifact failed."""

    def __init__(self, path, reason: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")


class NumericalDomainError(GeoFlowError, ArithmeticError):
    """Non-finite derivative or a value outside the domain of a formula."""


class PositivityError(NumericalDomainError):
    """A density lost positivity during stepping."""

    def __init__(self, message: str, index: int):
        self.index = int(index)
        super().__init__(f"{message} at grid index {self.index}")


class ConvergenceError(GeoFlowError, RuntimeError):
    """
    An implicit solve did not reach its tolerance.

    Args:
        message: Description of the failed solve
        residual: Final residual
        iterations: Iterations performed
        step: Step or iteration index of the enclosing loop, if known
        module: Name of the module that ran the solve
    """

    def __init__(self, message: str, residual: float, iterations: int,
                 step: Optional[int] = None, module: Optional[str] = None):
        self.message = message
        self.residual = float(residual)
        self.iterations = int(iterations)
        self.step = step
        self.module = module
        super().__init__(self._format(message))

    def _format(self, message: str) -> str:
        where = []
        if self.module:
            where.append(self.module)
        if self.step is not None:
            where.append(f"step {self.step}")
        prefix = f"[{', '.join(where)}] " if where else ""
        return (f"{prefix}{message}: residual {self.residual:.3e} "
                f"after {self.iterations} iterations")

    def at(self, step: int, module: Optional[str] = None) -> "ConvergenceError":
        """Return a copy tagged with the enclosing loop index."""
        return ConvergenceError(self.message, self.residual, self.iterations,
                                step=step, module=module or self.module)


def require_finite(values, component: str) -> None:
    """
    Raise NumericalDomainError if any entry is NaN or infinite.

    Args:
        values: Array-like to check
        component: Name reported in the error (e.g. 'dH/dq')
    """
    arr = np.asarray(values)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
        raise NumericalDomainError(
            f"non-finite value in {component} (flat index {bad})"
        )
