"""Exception hierarchy shared by all fairauc modules."""


class FairAucError(Exception):
    """Base class for library errors."""


class SchemaError(FairAucError):
    pass


class ParseError(FairAucError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class SplitError(FairAucError):
    pass


class DegenerateDatasetError(FairAucError):
    """Raised when a dataset has no positives or no negatives."""


class EmptyStratumError(FairAucError):
    def __init__(self, stratum):
        super().__init__(f"stratum (group={stratum[0]}, label={stratum[1]:+d}) is empty")
        self.stratum = stratum


class EmptyClassError(FairAucError):
    pass


class DegenerateError(FairAucError):
    pass


class ArgumentError(FairAucError, ValueError):
    pass


class BatchTooSmallError(FairAucError):
    pass


class BatchDegenerateError(FairAucError):
    pass


class NumericError(FairAucError):
    pass


class DivergenceError(FairAucError):
    """Training blew up; ``trajectory`` holds the records collected so far."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class UsageError(FairAucError):
    pass
