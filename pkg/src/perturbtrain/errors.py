"""Exception types shared across the package."""


class PerturbTrainError(Exception):
    pass


class DimensionError(PerturbTrainError, ValueError):
    pass


class InputError(PerturbTrainError, ValueError):
    pass


class NonFiniteError(PerturbTrainError, FloatingPointError):
    pass


class ConsistencyError(PerturbTrainError, ValueError):
    pass


class FormatError(PerturbTrainError, ValueError):
    pass


class DegenerateDirectionError(PerturbTrainError, ArithmeticError):
    """Raised when a SAM/ASAM direction would divide by a zero norm."""


class DegenerateBaselineError(PerturbTrainError, ArithmeticError):
    pass


class PreconditionError(PerturbTrainError, ValueError):
    pass


class ConfigError(PerturbTrainError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TruncatedFileError(FormatError, OSError):
    pass
