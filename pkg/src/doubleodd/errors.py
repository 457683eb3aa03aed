"""Exception types raised across the package."""


class DoubleOddError(Exception):
    """Base class for all package errors."""


class InvalidField(DoubleOddError, ValueError):
    pass


class InvalidArgument(DoubleOddError, ValueError):
    pass


class SingularPoint(DoubleOddError, ValueError):
    """Kernel evaluated at x == y."""


class AxisPoint(DoubleOddError, ValueError):
    """Kernel quadrature requested on (or too close to) a coordinate axis."""


class StepRejected(DoubleOddError, RuntimeError):
    """A time step violated the CFL limit; the caller should reduce dt."""

    def __init__(self, message, cfl=None):
        super().__init__(message)
        self.cfl = cfl


class OpenTrajectory(DoubleOddError):
    """Field series ended before the particle left the box."""


class PreconditionNotChecked(DoubleOddError, RuntimeError):
    pass


class PreconditionFailed(DoubleOddError, ValueError):
    pass


class DegenerateField(DoubleOddError, ValueError):
    pass


class UnderResolvedBox(DoubleOddError, ValueError):
    pass


class ConfigError(DoubleOddError, ValueError):
    pass
