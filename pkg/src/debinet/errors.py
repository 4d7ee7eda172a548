"""Exception hierarchy shared across the package."""


class DebinetError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSizeError(DebinetError, ValueError):
    pass


class InvalidSparsityError(DebinetError, ValueError):
    pass


class InvalidParameterError(DebinetError, ValueError):
    pass


class ShapeError(DebinetError, ValueError):
    pass


class CsvFormatError(DebinetError, ValueError):
    """A CSV cell could not be parsed; carries the 1-based data row and column name."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class NonNumericCellError(CsvFormatError):
    pass


class MissingColumnError(CsvFormatError):
    pass


class LassoConvergenceError(DebinetError, RuntimeError):
    def __init__(self, message, kkt_residual, n_sweeps, column=None):
        super().__init__(message)
        self.kkt_residual = kkt_residual
        self.n_sweeps = n_sweeps
        self.column = column


class NothingSelectedError(DebinetError, ValueError):
    pass


class OlsInfeasibleError(DebinetError, ValueError):
    """More features selected than rows; raise the penalty."""


class DivergenceError(DebinetError, FloatingPointError):
    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


class UnsupportedKernelError(DebinetError, ValueError):
    pass


class InvalidMatrixError(DebinetError, ValueError):
    pass


class MatrixSizeError(DebinetError, ValueError):
    pass


class DegenerateKernelWarning(UserWarning):
    pass


class DegenerateQueryError(DebinetError, ValueError):
    def __init__(self, message, row):
        super().__init__(message)
        self.row = row


class SingularDesignError(DebinetError, ValueError):
    def __init__(self, message, condition_number):
        super().__init__(message)
        self.condition_number = condition_number


class FoldSizeError(DebinetError, ValueError):
    pass


class NonCorrectableError(DebinetError, ValueError):
    pass


class UndefinedVarianceError(DebinetError, ValueError):
    pass
