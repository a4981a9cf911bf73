"""Exception hierarchy shared across the package."""


class DicoopError(Exception):
    """Base class for every error raised by this package."""


class ArgumentError(DicoopError, ValueError):
    """A caller-supplied argument violates an operation's contract."""


class LayoutError(ArgumentError):
    """Token count incompatible with the requested prompt layout."""


class NormalizationContractError(DicoopError):
    """An input that must be unit-norm is not."""


class DegenerateFeatureError(DicoopError):
    """Pre-normalization encoder output is too close to zero to normalize."""


class SetupError(DicoopError):
    """A training run cannot start (for example, too few source domains)."""


class InsufficientDataError(DicoopError):
    """A few-shot sample asked for more records than a cell holds."""


class ConfigError(DicoopError):
    """A config document violates the strict schema."""


class FeatureFormatError(DicoopError):
    """Base class for feature-file format violations."""


class BadMagicError(FeatureFormatError):
    """The file does not start with the expected magic bytes."""


class VersionMismatchError(FeatureFormatError):
    """The file or manifest declares an unsupported format version."""


class TruncatedPayloadError(FeatureFormatError):
    """The file ends before the header-declared payload does."""


class HeaderMismatchError(FeatureFormatError):
    """Header, payload size, and manifest disagree with each other."""


class IdRangeError(FeatureFormatError):
    """A record carries a class or domain id outside the declared range."""
