"""Exception types raised across the package.

The CLI maps any :class:`GPDRError` to exit status 2 and prints the class name.
"""


class GPDRError(Exception):
    """Base class for all library errors."""


class NotFactorizable(GPDRError):
    """Cholesky factorization failed even after the jitter policy was exhausted."""


class DimensionMismatch(GPDRError, ValueError):
    pass


class NonFiniteObjective(GPDRError):
    """The optimization objective became NaN or infinite (usually a bad learning rate)."""


class ZeroVariance(GPDRError, ValueError):
    """A KL-based kernel received a non-positive variance."""


class TooFewUnits(GPDRError, ValueError):
    pass


class DegenerateTargets(GPDRError, ValueError):
    pass


class NegativeValue(GPDRError, ValueError):
    pass


class DegenerateWeights(GPDRError):
    pass


class MissingTaggedColumn(GPDRError, KeyError):
    pass


class MisorderedInterval(GPDRError, ValueError):
    pass


class SingularDesign(GPDRError):
    pass


class InconsistentKernel(GPDRError):
    """A quantity that must be non-negative by construction came out negative."""


class MissingColumn(GPDRError, KeyError):
    pass


class NonNumericCell(GPDRError, ValueError):
    pass


class EmptyFile(GPDRError, ValueError):
    pass
