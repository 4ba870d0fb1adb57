"""Exception hierarchy shared by all dglab modules."""


class DGLabError(Exception):
    """Base class for every error raised by dglab."""


class SpaceError(DGLabError, ValueError):
    """Invalid graph description or misuse of a metric measure space."""


class GraphParseError(SpaceError):
    """The graph document could not be parsed or has malformed entries."""


class DisconnectedGraphError(SpaceError):
    """The graph has more than one connected component."""


class NonPositiveValueError(SpaceError):
    """A node weight or an edge length is not strictly positive."""


class UnknownNodeError(SpaceError, LookupError):
    """A node id that does not belong to the space."""


class WindowError(SpaceError):
    """A radius window that is empty, below the atomic scale or too large."""


class AtomicScaleError(WindowError):
    """Every sample degenerated because the radii sit at the edge-length scale."""


class TrajectoryError(DGLabError, ValueError):
    """A space-time function is too short or inconsistent with its space."""


class MarginError(DGLabError, ValueError):
    """A cylinder does not fit inside the available space-time extent.

    ``required`` is the earliest start time the geometry needs and
    ``available`` the start time of the trajectory.
    """

    def __init__(self, message, required=None, available=None):
        super().__init__(message)
        self.required = required
        self.available = available


class ConvergenceError(DGLabError, RuntimeError):
    """Newton iteration did not reach the gradient tolerance."""

    def __init__(self, message, grad_norm=None, step=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.step = step


class DegenerateError(DGLabError, ValueError):
    """An estimator was given input for which its ratio is undefined."""


class DataCorruptionError(DGLabError, ValueError):
    """An iteration trace violates a containment that holds by construction."""


class ReductionFailure(DGLabError, RuntimeError):
    """An oscillation-reduction search exhausted its bound.

    ``details`` carries the measured quantities so that nothing is fabricated.
    """

    def __init__(self, message, details=None, round_index=None):
        super().__init__(message)
        self.details = details or {}
        self.round_index = round_index


class ConfigError(DGLabError, ValueError):
    """Configuration validation failed; ``problems`` lists every bad field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))
