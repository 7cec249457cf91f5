"""Exception types shared across the package.

The CLI maps ConfigError to exit code 2 and FormatError to exit code 3;
everything else is a programming error and propagates.
"""


class TuckerTrainError(Exception):
    pass


class ShapeError(TuckerTrainError, ValueError):
    """Array dimensions inconsistent with what an operation requires."""


class RankError(TuckerTrainError, ValueError):
    """Requested decomposition rank outside the valid range."""


class DomainError(TuckerTrainError, ValueError):
    """Numeric argument outside a function's mathematical domain."""


class GraphError(TuckerTrainError, ValueError):
    """Model surgery referenced an unknown layer or would break shapes."""


class FormatError(TuckerTrainError, ValueError):
    """On-disk data (dataset file, checkpoint) is malformed."""


class ConfigError(TuckerTrainError, ValueError):
    """Experiment configuration is missing, unparseable, or inconsistent."""
