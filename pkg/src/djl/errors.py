"""Exception hierarchy shared by every module."""


class DjlError(Exception):
    """Base class for all library errors."""


class StripViolation(DjlError, ValueError):
    """Argument lies outside the strip where the moment generating function is finite."""


class NoMartingaleDrift(DjlError, ValueError):
    """s=1 is outside the finiteness strip, so no drift makes the price a martingale."""


class QuadratureNotConverged(DjlError, ArithmeticError):
    pass


class SingularDensity(DjlError, ValueError):
    """The law of S_T has no continuous density (Variance Gamma with T <= nu/2)."""


class DegenerateDensity(DjlError, ArithmeticError):
    pass


class BoundaryPoint(DjlError, IndexError):
    pass


class ArbitrageDetected(DjlError, ValueError):
    pass


class TabulationRangeTooNarrow(DjlError, ArithmeticError):
    pass


class NoSaddle(DjlError, ArithmeticError):
    pass


class StripExhausted(DjlError, ArithmeticError):
    pass


class SaddleInUnitInterval(DjlError, ArithmeticError):
    pass


class RegimeTooSmall(DjlError, ValueError):
    pass


class NonFiniteState(DjlError, ArithmeticError):
    pass
