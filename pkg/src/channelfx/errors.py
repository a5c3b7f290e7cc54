"""Exception hierarchy shared by all channelfx modules."""


class ChannelError(Exception):
    """Base class for every error raised by channelfx."""


class ValidationError(ChannelError, ValueError):
    """Invalid channel, grid or configuration data.

    ``path`` is a JSON pointer to the offending field when the data came
    from a serialized document.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.message = message
        self.path = path


class DomainError(ChannelError, ValueError):
    """A parameter lies outside the declared channel domain."""


class GridMismatchError(ChannelError, ValueError):
    """Two sampled objects do not live on the same grid."""


class NumericError(ChannelError, ArithmeticError):
    """A non-finite value was produced; ``location`` says where."""

    def __init__(self, message, location=None):
        super().__init__(message if location is None else f"{message} at {location}")
        self.location = location


class AssemblyError(NumericError):
    """Degenerate metric encountered while assembling a linear system."""


class SolverError(ChannelError, RuntimeError):
    """Iterative solver failed to reach the requested tolerance."""

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class ReductionError(ChannelError, ArithmeticError):
    """The finite-rate reduction is undefined (non-positive scaled flux)."""

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = tuple(nodes)


class SingularityError(NumericError):
    """Vanishing gradient where a field direction is required."""


class StabilityError(ChannelError, ValueError):
    """Explicit time step violates the stability bound."""


class GeometryError(ChannelError, RuntimeError):
    """A particle could not be returned inside the channel."""
