"""Exception hierarchy shared by the pipeline stages."""


class SemgError(Exception):
    """Base class for all pipeline errors."""


class ParseError(SemgError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    pass


class OrderingError(ParseError):
    pass


class DomainError(SemgError, ValueError):
    pass


class SynchronizationError(SemgError):
    pass


class FitError(SemgError):
    pass


class InsufficientDataError(SemgError):
    pass


class DegenerateTrainingError(SemgError):
    pass


class SearchError(SemgError):
    pass


class PlanError(SemgError):
    def __init__(self, message, acquisition_id=None):
        self.acquisition_id = acquisition_id
        super().__init__(message)


class ConvergenceWarning(UserWarning):
    pass


class ProtocolWarning(UserWarning):
    pass
