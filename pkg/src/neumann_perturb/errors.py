"""Exception hierarchy shared by all modules.

The CLI maps :class:`ValidationError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class ValidationError(ValueError):
    """Bad input: malformed files, broken invariants, invalid configs."""


class NumericalError(RuntimeError):
    """A numerical step failed. ``module`` names where it happened."""

    module = "unknown"

    def __init__(self, message, module=None):
        super().__init__(message)
        if module is not None:
            self.module = module


class MeshParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshValidationError(ValidationError):
    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        msg = f"mesh invariant violated [{invariant}]"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SPDError(NumericalError):
    """Positive definiteness lost at a vertex or quadrature point."""

    module = "metric"


class AssemblyError(NumericalError):
    module = "fem"


class SolverError(NumericalError):
    module = "eigensolver"


class DomainError(NumericalError):
    """Finite-difference stencil leaves the chart."""

    module = "chart_calculus"


class DegenerateNormalError(NumericalError):
    module = "chart_calculus"


class ConsistencyError(NumericalError):
    module = "perturbation"


class TrackingError(NumericalError):
    module = "perturbation"


class BorderedSolveError(NumericalError):
    module = "liapunov_schmidt"


class WindowError(NumericalError):
    module = "liapunov_schmidt"
