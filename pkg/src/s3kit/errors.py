"""Exception types shared across s3kit."""


class S3Error(Exception):
    """Base class for all s3kit errors."""


class OutOfBounds(S3Error, IndexError):
    pass


class SizeMismatch(S3Error, ValueError):
    pass


class NotInView(S3Error, KeyError):
    pass


class SpecInvalid(S3Error, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid spec")


class UnknownPattern(S3Error, KeyError):
    pass


class DimensionError(S3Error, ValueError):
    pass


class GridShapeMismatch(S3Error, ValueError):
    pass


class NonFiniteScore(S3Error, ValueError):
    pass


class NonFinite(S3Error, ValueError):
    pass


class SingularAfterDamping(S3Error, ArithmeticError):
    pass


class SingularBlock(S3Error, ArithmeticError):
    """A block of the inverse Hessian is too ill-conditioned to invert.

    Callers can retry with a larger damping factor.
    """


class AlreadyPruned(S3Error, ValueError):
    pass


class ZeroReference(S3Error, ZeroDivisionError):
    pass


class UnsupportedBits(S3Error, ValueError):
    pass


class TooLarge(S3Error, ValueError):
    pass


class Singular(S3Error, ArithmeticError):
    pass
