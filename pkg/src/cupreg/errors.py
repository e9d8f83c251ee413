"""Exception hierarchy shared across the package."""


class CupRegError(Exception):
    """Base class for all errors raised by cupreg."""


class InvalidArgumentError(CupRegError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateProjectionError(CupRegError):
    """A point lies at or above the X-ray source (z >= H)."""


class DegenerateFitError(CupRegError):
    """The landmarks do not determine a unique ellipse."""


class DegenerateConicError(DegenerateFitError):
    """A conic could not be converted to a real ellipse."""


class NotAnEllipseError(DegenerateConicError):
    """The conic discriminant is non-negative (parabola or hyperbola)."""


class DegenerateGradientError(DegenerateFitError):
    """The eigen-spectrum is too close to degenerate to differentiate."""


class ImplausibleGeometryError(CupRegError):
    """Observed ellipse is incompatible with the implant radius and scanner."""
