"""Exception hierarchy shared by the envcontour modules."""


class EnvContourError(Exception):
    """Base class for all errors raised by envcontour."""


class ParameterError(EnvContourError, ValueError):
    """A model or function parameter is outside its admissible range."""


class DegenerateConditionalError(ParameterError):
    """A conditional link evaluates to a non-positive scale or shape."""


class InputError(EnvContourError, ValueError):
    """Malformed input data (empty sample sets, too few directions, ...)."""


class OriginNotInteriorError(EnvContourError):
    """The chosen origin lies on or outside one of the percentile hyperplanes."""

    def __init__(self, message, index=None, direction=None, value=None):
        super().__init__(message)
        self.index = index
        self.direction = direction
        self.value = value


class UnboundedCellError(EnvContourError):
    """The directions do not positively span the space, so the cell is unbounded."""


class RankError(EnvContourError):
    """Point set is affinely dependent; no full-dimensional hull exists."""


class DistributionDegenerateError(EnvContourError):
    """No strictly interior origin exists for the estimated half-spaces."""


class ChartSingularityError(EnvContourError):
    """The spherical chart metric is singular (pole) at the requested angle."""


class ConfigError(EnvContourError):
    """Invalid run or model configuration."""
