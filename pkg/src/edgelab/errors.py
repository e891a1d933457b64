"""Exception taxonomy shared by all edgelab modules."""


class EdgeLabError(Exception):
    """Base class for all errors raised by edgelab."""


class InvalidParameterError(EdgeLabError, ValueError):
    """A constructor or operation precondition was violated."""


class DomainError(EdgeLabError, ValueError):
    """Input lies outside the mathematical domain of the operation."""


class StencilUnderflowError(EdgeLabError):
    """Grid too coarse for the requested finite-difference stencil."""


class PositivityFailureError(EdgeLabError):
    """A metric or form lost positivity; carries the first failing node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SingularSystemError(EdgeLabError):
    """A linear mode solve hit a (near-)singular system."""

    def __init__(self, message, eigenvalue_estimate=None):
        super().__init__(message)
        self.eigenvalue_estimate = eigenvalue_estimate


class LinearSolveFailureError(EdgeLabError):
    """Sparse/banded solve failed inside Newton."""


class DampingFailureError(EdgeLabError):
    """No damping factor in {1, 1/2, ..., 2^-8} decreased the residual."""


class ContinuationStallError(EdgeLabError):
    """Continuation could not bridge a schedule gap after 12 bisections."""


class ConvergenceFailureError(EdgeLabError):
    """An iterative solver hit its iteration cap."""


class EstimateViolationError(EdgeLabError):
    """An a-priori-estimate monitor tripped on an accepted state."""


class GaussBonnetMismatchError(EdgeLabError):
    """(mu, beta, topology) configuration inconsistent with Gauss-Bonnet."""


class IllConditionedBasisError(EdgeLabError):
    """Two candidate expansion exponents collide."""

    def __init__(self, message, colliding_pair=None):
        super().__init__(message)
        self.colliding_pair = colliding_pair


class InadmissibleGammaError(EdgeLabError, ValueError):
    """Holder exponent outside the admissible wedge range."""


class ConfigError(EdgeLabError):
    """Run configuration failed validation; carries the offending field."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
