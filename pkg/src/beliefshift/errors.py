"""Exception hierarchy shared by every module."""


class BeliefShiftError(Exception):
    """Base class for all package errors."""


class InvalidInputError(BeliefShiftError, ValueError):
    pass


class InvalidParameterError(BeliefShiftError, ValueError):
    pass


class ShapeError(BeliefShiftError, ValueError):
    pass


class BackendError(BeliefShiftError):
    """Raised by model backends; a failed segment is recorded rather than fatal."""


class TransportError(BackendError):
    def __init__(self, message, attempts=0, status_code=None):
        super().__init__(message)
        self.attempts = attempts
        self.status_code = status_code


class ProtocolError(BackendError):
    pass


class CapabilityError(BackendError):
    pass


class RewardParseError(BeliefShiftError, ValueError):
    def __init__(self, message, raw):
        super().__init__(message)
        self.raw = raw


class RunError(BeliefShiftError):
    pass
