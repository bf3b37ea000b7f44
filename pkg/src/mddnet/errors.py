"""Exception hierarchy shared across the package."""


class MddError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MddError):
    """Invalid or inconsistent configuration values."""


class MalformedManifest(MddError):
    """Manifest file does not follow the documented JSON schema."""


class MissingFile(MddError):
    """A feature file referenced by a manifest does not exist."""


class DuplicateId(MddError):
    """Two manifest entries share the same sample id."""


class ShapeMismatch(MddError):
    """Array shapes violate a declared contract."""


class NonFiniteValue(MddError):
    """NaN or Inf encountered where finite values are required."""


class EmptyDataset(MddError):
    """An operation requires at least one sample."""


class TooFewSamples(MddError):
    """Not enough samples for the requested fold count."""


class UnknownMode(MddError):
    """Unrecognized mode string (fusion mode, model mode, ...)."""


class DivergedLoss(MddError):
    """Training loss became non-finite."""


class PerplexityTooLarge(MddError):
    """t-SNE perplexity incompatible with the number of points."""


class IoError(MddError):
    """Failed to read or write an artifact file."""
