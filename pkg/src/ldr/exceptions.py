"""Exception types raised by the ldr package."""


class LdrError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(LdrError, ValueError):
    pass


class IncompatibleDimensions(LdrError, ValueError):
    """Rectangular transform shapes that cannot be built from square blocks."""


class ImaginaryResidueExceeded(LdrError, ArithmeticError):
    """An inverse FFT that should be real carried a non-roundoff imaginary part.

    This always signals a bug upstream (wrong spectrum, wrong scaling vector),
    never bad user input.
    """


class InvalidOperatorPowers(LdrError, ValueError):
    """Operator matrices violate A^n = aI or B^n = bI."""


class SingularDisplacement(LdrError, ValueError):
    """The Stein operator is not invertible because 1 - ab vanishes."""


class CauchyPoleCollision(LdrError, ValueError):
    pass


class IdxFormatError(LdrError, ValueError):
    pass


class BadMagic(IdxFormatError):
    pass


class TruncatedFile(IdxFormatError):
    pass


class DimensionOverflow(IdxFormatError):
    pass
