"""Exception hierarchy shared by every mdaa module."""


class MdaaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(MdaaError, ValueError):
    pass


class NotPositiveDefinite(MdaaError, ArithmeticError):
    """A Cholesky pivot was non-positive or non-finite.

    Usually means gamma is too small for the accumulated Gram matrix, or the
    accumulation itself was corrupted by non-finite features.
    """


class InvalidSpec(MdaaError, ValueError):
    pass


class NonFiniteInput(MdaaError, ValueError):
    pass


class EmptyClass(MdaaError, ValueError):
    """A class has no source samples, so its balancing weight is undefined."""

    def __init__(self, class_id: int):
        super().__init__(f"class {class_id} has no source samples")
        self.class_id = class_id


class InvalidN(MdaaError, ValueError):
    pass


class EmptyInput(MdaaError, ValueError):
    pass


class EmptyBatch(MdaaError, ValueError):
    pass


class CorruptSnapshot(MdaaError, ValueError):
    pass


class InvalidConfig(MdaaError, ValueError):
    pass


class InvalidSeverity(MdaaError, ValueError):
    pass


class LengthMismatch(MdaaError, ValueError):
    pass


class NotInitialized(MdaaError, RuntimeError):
    pass
