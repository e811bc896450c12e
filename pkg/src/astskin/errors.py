"""Exception hierarchy shared across the package."""


class AstskinError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AstskinError):
    """A configuration object (tone set, skin spec, protocol) violates its invariants."""


class DomainError(AstskinError):
    """An argument is outside the physical or mathematical domain of an operation."""


class InputError(AstskinError):
    """Runtime input data is malformed (shape/rate mismatch, NaN, bad PCM, ...)."""


class ProtocolError(AstskinError):
    """A calibration or test protocol cannot be executed as requested."""


class SplitError(AstskinError):
    """A dataset is too small to partition."""


class ConditioningError(AstskinError):
    """A kernel matrix stayed indefinite after the maximum jitter escalation."""


class ProvenanceError(AstskinError):
    """Fingerprints of a model bundle and a dataset do not match."""
