"""Exception and warning classes raised across the package."""


class DIDError(Exception):
    """Base class for all estimation errors."""


class DataError(DIDError, ValueError):
    """Problems with input data (parsing, schema, inconsistent records)."""


class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"missing column: {column!r}")
        self.column = column


class ParseError(DataError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"cannot parse {value!r} in column {column!r} at row {row}")
        self.row = row
        self.column = column
        self.value = value


class NegativeWeight(DataError):
    pass


class InconsistentGroup(DataError):
    pass


class UnknownCovariate(DataError):
    pass


class DesignError(DIDError):
    """The data cannot support the requested design."""


class NoControlUnits(DesignError):
    pass


class EmptyControl(DesignError):
    pass


class MissingBasePeriod(DesignError):
    pass


class SingularDesign(DesignError):
    pass


class UnsupportedPattern(DesignError):
    pass


class NoPostPeriods(DesignError):
    pass


class Collinear(DesignError):
    pass


class UnbalancedPanel(DesignError):
    pass


class DisconnectedDesign(DesignError):
    pass


class InsufficientPrePeriods(DesignError):
    pass


class LabelMismatch(DIDError, ValueError):
    pass


class TooFewClusters(DIDError, ValueError):
    pass


class UncenteredInfluence(DIDError, ValueError):
    pass


class InvalidSpec(DIDError, ValueError):
    pass


class DegenerateCovariate(UserWarning):
    """A covariate has no variation after binarization."""
