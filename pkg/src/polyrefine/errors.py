"""Exception types shared across the package."""


class VerifierError(Exception):
    """Base class for all errors raised by polyrefine."""


class ParseError(VerifierError):
    """A network or input file could not be parsed."""


class ShapeError(VerifierError):
    """Dimensions of vectors, matrices or boxes do not line up."""


class InvalidFacts(VerifierError):
    """Forced facts are inconsistent or reference unknown neurons."""


class InvalidK(VerifierError):
    """Split count is not a power of two."""


class DegenerateBox(VerifierError):
    """A box has a zero-width dimension where positive volume is required."""


class TooLarge(VerifierError):
    """Instance exceeds the size cap of an exponential procedure."""


class NumericalFailure(VerifierError):
    """The LP solver gave up (pivot limit or unacceptable residual)."""
