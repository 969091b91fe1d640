"""Exception hierarchy.

Every error carries a stable ``category`` slug so the CLI can emit a
single-line machine-parsable failure (``error: <category>: <detail>``).
"""


class EmbattrError(Exception):
    category = "error"


class ValidationError(EmbattrError):
    category = "validation"


class BadMagicError(ValidationError):
    category = "bad-magic"


class UnsupportedVersionError(ValidationError):
    category = "unsupported-version"


class TruncatedStreamError(ValidationError):
    category = "truncated"


class NonFiniteValueError(ValidationError):
    category = "non-finite"


class LabelRangeError(ValidationError):
    category = "label-out-of-range"


class UnknownLabelError(EmbattrError):
    category = "unknown-label"


class DegenerateVectorError(EmbattrError):
    category = "degenerate-vector"


class NoPositivePairsError(EmbattrError):
    category = "no-positive-pairs"


class DimensionMismatchError(EmbattrError):
    category = "dimension-mismatch"


class CompositionError(EmbattrError):
    category = "batch-composition"


class DivergenceError(EmbattrError):
    category = "divergence"


class ConfigurationError(EmbattrError):
    category = "configuration"


class UndefinedMetricError(EmbattrError):
    category = "undefined-metric"


class DegenerateProjectionError(EmbattrError):
    category = "degenerate-projection"


class InsufficientSamplesError(EmbattrError):
    category = "insufficient-samples"
