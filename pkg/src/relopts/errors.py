"""Exception taxonomy shared across the package."""


class RelOptsError(Exception):
    """Base class for all package errors."""


class ConfigError(RelOptsError):
    """Invalid environment or pipeline configuration."""


class ActionError(RelOptsError):
    """Illegal action or macro-action id."""


class ShapeError(RelOptsError):
    """Tensor dimension mismatch."""


class TapeError(RelOptsError):
    """Gradient tape misuse (reuse, backward before forward)."""


class NumericsError(RelOptsError):
    """Non-finite loss, gradient, or diverged value table."""


class MetricError(RelOptsError):
    """Distance-table construction failed (e.g. disconnected graph)."""


class StateError(RelOptsError):
    """Object used before it reached the required lifecycle state."""


class DistError(RelOptsError):
    """Malformed discrete distribution."""


class GraphError(RelOptsError):
    """Abstract transition graph cannot be built."""


class SpectralError(RelOptsError):
    """Eigendecomposition request is infeasible."""


class ArtifactError(RelOptsError):
    """Missing or hash-inconsistent pipeline artifact."""


class SkipBatch(RelOptsError):
    """Signal: degenerate batch, skip this update."""
