"""Exception hierarchy for etfe_lab."""


class EtfeLabError(Exception):
    """Base class for all errors raised by this package."""


class NotStable(EtfeLabError):
    pass


class NoConvergence(EtfeLabError):
    pass


class DimensionMismatch(EtfeLabError, ValueError):
    pass


class LengthMismatch(DimensionMismatch):
    pass


class UnsupportedOrder(EtfeLabError, ValueError):
    pass


class DuplicateLine(EtfeLabError, ValueError):
    pass


class TooManyExperiments(EtfeLabError, ValueError):
    pass


class NotExciting(EtfeLabError):
    def __init__(self, ell, sigma=0.0):
        self.ell = ell
        self.sigma = sigma
        super().__init__(f"input does not excite frequency index {ell} (sigma_u={sigma:g})")


class IndexOutOfRange(EtfeLabError, IndexError):
    pass


class ZeroNoise(EtfeLabError, ValueError):
    pass


class GridMismatch(EtfeLabError, ValueError):
    pass


class SingularInput(EtfeLabError):
    def __init__(self, ell):
        self.ell = ell
        super().__init__(f"stacked input DFT is singular at frequency index {ell}")


class MissingCell(EtfeLabError, KeyError):
    pass


class InvalidDelta(EtfeLabError, ValueError):
    pass


class MissingSigmaU(EtfeLabError, ValueError):
    pass


class GridInfeasible(EtfeLabError, ValueError):
    pass


class TruncationTooShort(EtfeLabError, ValueError):
    pass


class NonPositive(EtfeLabError, ValueError):
    pass


class SweepAborted(EtfeLabError):
    pass
