"""Exception hierarchy shared by every module.

CLI exit codes are attached to the classes so the front end can map a
failure to its stable code without inspecting messages.
"""


class DDMDError(Exception):
    exit_code = 1


class InvalidArgument(DDMDError, ValueError):
    exit_code = 2


class ValidationGateError(DDMDError):
    """A benchmark system failed its runtime oscillation check."""

    exit_code = 2


class NotOscillatory(DDMDError, ValueError):
    exit_code = 2


class DictionaryTooLarge(DDMDError):
    exit_code = 3

    def __init__(self, size, cap):
        super().__init__(f"dictionary of {size} functions exceeds cap of {cap}")
        self.size = size
        self.cap = cap


class NumericalFailure(DDMDError, ArithmeticError):
    exit_code = 4


class SimulationDiverged(NumericalFailure):
    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time
