"""Error categories shared by all modules.

Each category carries the process exit code the CLI reports for it.
"""


class A2slError(Exception):
    exit_code = 1


class InvalidArgument(A2slError, ValueError):
    exit_code = 2


class FormatError(A2slError, ValueError):
    exit_code = 3


class NumericError(A2slError, ArithmeticError):
    exit_code = 4


class SimulationDiverged(NumericError):
    def __init__(self, day, message=""):
        self.day = day
        super().__init__(f"simulation diverged at day {day}" + (f": {message}" if message else ""))


class TrainingDiverged(NumericError):
    def __init__(self, epoch, message=""):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}" + (f": {message}" if message else ""))


class DegenerateInput(A2slError, ValueError):
    exit_code = 5


class DegenerateLabels(DegenerateInput):
    pass


class PoolExhausted(A2slError, LookupError):
    exit_code = 6

    def __init__(self, slot, message=""):
        self.slot = slot
        super().__init__(f"no candidates left for {slot} slot" + (f": {message}" if message else ""))


class InsufficientObservations(A2slError, LookupError):
    exit_code = 6


class EmptyLoss(A2slError, ValueError):
    exit_code = 6


class MissingCheckpoint(A2slError, FileNotFoundError):
    exit_code = 7
