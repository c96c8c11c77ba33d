"""Exception types shared across the package."""


class RayWindingError(Exception):
    """Base class for all package-specific errors."""


class OracleExhausted(RayWindingError):
    """A boundary-word oracle cannot produce enough letters."""


class StabilizationFailure(RayWindingError):
    """A boundary prefix failed to stabilize after the retry budget."""


class MeasureError(RayWindingError):
    """A step measure violates the probability axioms."""


class DepthInconclusive(RayWindingError):
    """Nearest-orbit search hit its depth bound; retry with a larger depth."""


class NumericalInstability(RayWindingError):
    """A floating-point invariant (disk membership, determinant) broke down."""


class DegenerateStatistics(RayWindingError):
    """A statistical routine received data it cannot meaningfully process."""


class ConfigError(RayWindingError):
    """A run configuration failed schema validation."""


class StageOrderError(RayWindingError):
    """A pipeline stage was invoked before its prerequisites."""
