"""Exception hierarchy shared across the package."""


class ClassRescalError(Exception):
    """Base class for all errors raised by this package."""


class InputError(ClassRescalError, ValueError):
    """Bad input data or configuration (CLI exit code 2)."""


class ParseError(InputError):
    def __init__(self, message, path=None, line_number=None):
        self.path = path
        self.line_number = line_number
        where = ""
        if path is not None:
            where = f"{path}:"
        if line_number is not None:
            where += f"{line_number}: "
        elif where:
            where += " "
        super().__init__(where + message)


class EmptyInputError(InputError):
    pass


class ShapeError(InputError):
    pass


class SizeError(InputError):
    pass


class ConfigurationError(InputError):
    pass


class SplitError(InputError):
    pass


class UndefinedMetricError(InputError):
    pass


class NumericalError(ClassRescalError, ArithmeticError):
    """Numerical failure during fitting (CLI exit code 3)."""


class SingularityError(NumericalError):
    def __init__(self, message, pivot=None):
        self.pivot = pivot
        super().__init__(message)


class DivergenceError(NumericalError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)
