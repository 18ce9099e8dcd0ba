"""Exception types raised across the package."""


class VPMetaError(Exception):
    """Base class for all package errors."""


class ConfigError(VPMetaError):
    pass


class DataError(VPMetaError):
    """Bad or insufficient input data."""


class NumericError(VPMetaError):
    """Non-finite values detected in parameters or outputs."""


class ZeroVector(DataError, ValueError):
    pass


class MalformedRow(DataError):
    def __init__(self, index, reason=""):
        self.index = index
        msg = f"malformed row {index}"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class MissingColumn(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"missing column {name!r}")


class EmptyTrace(DataError):
    pass


class LeadingGap(DataError):
    pass


class TraceTooShort(DataError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class EmptyPool(DataError):
    pass


class EmptyRecords(DataError):
    pass


class MismatchedCohorts(DataError):
    pass


class NonPositiveInput(DataError, ValueError):
    pass
