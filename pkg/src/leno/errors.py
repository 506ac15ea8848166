"""Exception hierarchy shared by all modules."""


class LenoError(Exception):
    pass


class ValidationError(LenoError, ValueError):
    """Inputs violate a documented precondition."""


class CapacityError(ValidationError):
    """More modes requested than the discrete problem has degrees of freedom."""


class FormatError(LenoError, ValueError):
    """A container file is malformed, truncated or fails its checksum."""


class NumericalError(LenoError, ArithmeticError):
    pass


class StabilityError(ValidationError):
    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class DivergenceError(NumericalError):
    def __init__(self, message, step=None, history=None):
        super().__init__(message)
        self.step = step
        self.history = history
