"""Exception hierarchy shared by every engine.

Each error carries a machine-readable ``reason`` code and the process exit
code the command line front-end should use for it. Validation problems exit
with 1, numerical failures with 2.
"""

from contextlib import contextmanager

import numpy as np
from scipy.sparse import linalg as splinalg



class SpinBosonError(Exception):
    """Base class for every error raised on purpose by this package."""

    exit_code = 1
    default_reason = "error"

    def __init__(self, message, reason=None, **details):
        super().__init__(message)
        self.reason = reason or self.default_reason
        self.details = details

    def to_record(self):
        """Return the error as a JSON-ready dictionary."""
        record = {
            "reason": self.reason,
            "message": str(self),
            "exit_code": self.exit_code,
        }
        if self.details:
            record["details"] = {k: _plain(v) for k, v in self.details.items()}
        return record


def _plain(value):
    if isinstance(value, (int, float, str, bool)) or value is None:
        return value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


# Validation family (exit code 1)

class ConfigurationError(SpinBosonError):
    default_reason = "config.invalid"


class ArgumentError(SpinBosonError):
    default_reason = "argument.invalid"


class ModelClassError(SpinBosonError):
    """The form factor is outside D(omega^{-1/2})."""

    default_reason = "model.not_in_domain"


class PreconditionError(SpinBosonError):
    default_reason = "precondition.violated"


class CapacityError(SpinBosonError):
    default_reason = "fock.capacity"


class RangeError(SpinBosonError):
    default_reason = "kernel.out_of_range"


# Numerical family (exit code 2)

class NumericalFailure(SpinBosonError):
    exit_code = 2
    default_reason = "numerics.failed"


class SolverError(NumericalFailure):
    default_reason = "fock.solver_not_converged"

    def __init__(self, message, best_residual=None, **details):
        super().__init__(message, best_residual=best_residual, **details)
        self.best_residual = best_residual


class NumericalError(NumericalFailure):
    default_reason = "numerics.error_estimate"


class TabulationError(NumericalFailure):
    default_reason = "kernel.tabulation"


class InternalConsistencyError(NumericalFailure):
    default_reason = "numerics.inconsistent"


class EstimationError(NumericalFailure):
    default_reason = "mc.estimation_failed"


class TruncationError(NumericalFailure):
    default_reason = "mc.truncation_bound"

    def __init__(self, message, bound=None, **details):
        super().__init__(message, bound=bound, **details)
        self.bound = bound


@contextmanager
def solver_guard(what):
    """Re-raise LinAlgError and ARPACK failures from numpy/scipy as SolverError."""
    try:
        yield
    except splinalg.ArpackNoConvergence as e:
        raise SolverError(f"{what}: ARPACK did not converge: {e}", reason="fock.arpack_no_convergence") from e
    except splinalg.ArpackError as e:
        raise SolverError(f"{what}: ARPACK failed: {e}", reason="fock.arpack_error") from e
    except np.linalg.LinAlgError as e:
        raise SolverError(f"{what}: {e}", reason="numerics.linalg") from e
