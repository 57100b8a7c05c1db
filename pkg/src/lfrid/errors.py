"""Exception types raised across the toolkit."""


class LfrIdError(Exception):
    """Base class for all toolkit errors."""


class InvalidSpec(LfrIdError, ValueError):
    pass


class EmptyBand(InvalidSpec):
    """No DFT bin falls inside the requested excitation band."""


class DimMismatch(LfrIdError, ValueError):
    pass


class InsufficientData(LfrIdError, ValueError):
    pass


class LayoutError(LfrIdError, ValueError):
    pass


class InvalidStart(LfrIdError, RuntimeError):
    pass


class UnstableBla(LfrIdError, ValueError):
    pass


class DegenerateState(LfrIdError, ValueError):
    pass


class DegenerateChannel(LfrIdError, ValueError):
    pass


class EmptyEvaluation(LfrIdError, ValueError):
    pass


class ConfigError(LfrIdError, ValueError):
    pass


class DivergedAt(LfrIdError, ArithmeticError):
    """A simulation produced a non-finite value at sample ``k``.

    The trajectory computed up to (not including) ``k`` is kept in
    ``partial`` so callers can inspect where things went wrong.
    """

    def __init__(self, k, partial=None):
        super().__init__(f"simulation diverged at sample {k}")
        self.k = int(k)
        self.partial = partial
