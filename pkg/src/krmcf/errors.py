"""Exception types shared across the package."""


class BlowUp(RuntimeError):
    """A state became non-finite or its curvature left the resolvable range."""

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6g})")
        self.t = t


class DegenerateImmersion(RuntimeError):
    """The induced metric lost positive definiteness."""


class GraphDegenerate(RuntimeError):
    """The surface stopped being a graph over the first factor."""

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6g})")
        self.t = t


class ChartError(ValueError):
    """A point left the coordinate chart of a factor."""


class NoBlowUp(RuntimeError):
    """A singularity analysis was requested for a completed trajectory."""


class ParseError(ValueError):
    """Malformed configuration text."""


class ValidationError(ValueError):
    """Configuration values outside their admissible range."""
