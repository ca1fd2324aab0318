"""Exception hierarchy shared by all pipefl modules."""


class PipeflError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PipeflError, ValueError):
    """Input or result failed a structural check (CLI exit code 1)."""


class FormatError(PipeflError, ValueError):
    """A file or byte stream could not be parsed (CLI exit code 2)."""


# profiles
class NonPositiveSigma(ValidationError):
    pass


class EmptyCounts(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class InvalidRange(ValidationError):
    pass


# clustering
class KTooLarge(ValidationError):
    pass


class KTooLargeForEnumeration(ValidationError):
    pass


class NoOptimalHypothesis(PipeflError, RuntimeError):
    """No hypothesis passed both checks; points at a tolerance or logic bug."""


class DeadlineViolation(ValidationError):
    pass


class NonMonotoneBoundaries(ValidationError):
    pass


# timing
class EmptySelection(ValidationError):
    pass


class OverlapDetected(ValidationError):
    pass


# fedtrain
class EmptyShard(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class EmptyAggregation(ValidationError):
    pass


class NonPositiveLearningRate(ValidationError):
    pass


class EmptyEvalSet(ValidationError):
    pass


class DivergenceDetected(PipeflError, ArithmeticError):
    pass


# data
class BadMagic(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class UnsupportedElementType(FormatError):
    pass


class InsufficientSamples(ValidationError):
    pass


# cli
class ConfigError(FormatError):
    pass
