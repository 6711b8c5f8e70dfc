"""Exception types raised across the package."""


class CRVQError(ValueError):
    """Base class for all errors raised by crvq."""


class BadMagic(CRVQError):
    pass


class VersionMismatch(CRVQError):
    pass


class TruncatedFile(CRVQError):
    pass


class TrailingBytes(CRVQError):
    pass


class UnsupportedDtype(CRVQError):
    pass


class NonFiniteValue(CRVQError):
    pass


class CorruptCodeStream(CRVQError):
    pass


class DimMismatch(CRVQError):
    pass


class EmptyInput(CRVQError):
    pass


class DegenerateCalibration(CRVQError):
    pass


class SingularGram(CRVQError):
    pass


class ConfigError(CRVQError):
    pass
