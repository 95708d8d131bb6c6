"""Exception hierarchy shared by every module."""


class CsaTransError(Exception):
    """Base class; ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = 2


class ParseError(CsaTransError):
    pass


class EmptyInput(CsaTransError):
    pass


class SchemaError(CsaTransError):
    pass


class TopologyError(CsaTransError):
    pass


class EmptyCorpus(CsaTransError):
    pass


class EmptyDataset(CsaTransError):
    pass


class EmptyMask(CsaTransError):
    pass


class RangeError(CsaTransError, ValueError):
    pass


class ShapeError(CsaTransError, ValueError):
    pass


class ConfigError(CsaTransError, ValueError):
    exit_code = 1


class OddDim(ConfigError):
    pass


class NotScalar(CsaTransError, ValueError):
    pass


class ConvergenceError(CsaTransError):
    exit_code = 3


class NaNLoss(CsaTransError, FloatingPointError):
    exit_code = 3


class PrefixTooLong(CsaTransError, ValueError):
    pass


class CorruptCheckpoint(CsaTransError):
    pass
