"""Exception hierarchy shared by all geoflow modules."""


class GeoflowError(Exception):
    """Base class for every error raised by geoflow."""


class MeshError(GeoflowError):
    """Invalid or degenerate triangulation."""


class GeometryError(GeoflowError):
    """Evaluation outside the admitted region of a target (guard or tube)."""


class SolverError(GeoflowError):
    """Linear solver failure (no convergence, NaN residual)."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FlowError(GeoflowError):
    """A time step failed; carries the step index and the partial history."""

    def __init__(self, message, step=None, history=None):
        super().__init__(message)
        self.step = step
        self.history = history if history is not None else []


class FlowNotConverged(FlowError):
    """The flow hit ``max_steps`` before the velocity criterion was met."""
