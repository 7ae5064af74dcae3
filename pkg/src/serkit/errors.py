"""Exception types shared across the toolkit.

The CLI maps each family to an exit code, so every concrete error derives
from exactly one of the family bases below.
"""


class SerError(Exception):
    """Base class for all toolkit errors."""


class InputError(SerError, ValueError):
    """Bad corpus or input data (exit code 2)."""


class ConfigError(SerError, ValueError):
    """Invalid configuration or arguments (exit code 4)."""


class MismatchError(SerError, ValueError):
    """Model and data disagree on shape or kind (exit code 5)."""


# audio
class MalformedContainer(InputError):
    pass


class UnsupportedEncoding(InputError):
    pass


class TruncatedData(InputError):
    pass


# features
class EmptySignal(InputError):
    pass


class DegenerateFilter(ConfigError):
    pass


class EmptySequence(InputError):
    pass


# model
class DimensionMismatch(MismatchError):
    pass


class NotOneHot(InputError):
    pass


class TraceMismatch(MismatchError):
    pass


# train
class IndexOutOfRange(InputError, IndexError):
    pass


class EmptyClass(InputError):
    pass


class ShapeMismatch(MismatchError):
    pass


class InconsistentShapes(MismatchError):
    pass


class EmptyDataset(InputError):
    pass


# svm
class SingleClassInput(InputError):
    pass


class DegenerateVariance(InputError):
    pass


class EmptyMatrix(InputError):
    pass


class MissingClass(InputError):
    pass


class NoConvergence(UserWarning):
    """SMO hit its iteration budget with KKT violations left."""


# eval
class UnknownLabel(InputError):
    pass


class LengthMismatch(InputError):
    pass


# dataset
class UnknownEmotionToken(InputError):
    pass


class EmptyCorpus(InputError):
    pass


class BadMagic(InputError):
    pass


class VersionMismatch(InputError):
    pass


class SizeMismatch(InputError):
    pass


class ConfigHashMismatch(UserWarning):
    """Feature cache was built under a different FeatureConfig."""


class SchemaVersionMismatch(MismatchError):
    pass


class MalformedDocument(MismatchError):
    pass
