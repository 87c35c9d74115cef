"""Exception hierarchy shared by all modules."""


class RobustaError(Exception):
    """Base class for every error raised by this package."""


class InputShapeError(RobustaError, ValueError):
    pass


class NumericError(RobustaError, ArithmeticError):
    pass


class DegenerateClassifierError(RobustaError, ValueError):
    pass


class ConditioningInfeasibleError(RobustaError):
    """Rejection sampling ran out of tries.

    ``acceptance`` holds the empirical acceptance rate observed before giving up
    (0.0 when nothing was accepted).
    """

    def __init__(self, message, acceptance=0.0):
        super().__init__(message)
        self.acceptance = acceptance


class EmptyNeighborhoodError(RobustaError):
    pass


class NotAdversarialError(RobustaError, ValueError):
    pass


class DivergenceError(RobustaError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ConfigError(RobustaError, ValueError):
    pass


class ParseError(RobustaError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DatasetError(RobustaError, ValueError):
    pass
