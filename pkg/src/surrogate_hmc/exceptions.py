"""Exception types raised across the package."""


class DimensionError(ValueError):
    """An array does not have the length or shape an operation requires."""


class DomainError(ValueError):
    """A parameter lies outside the region where a model is valid.

    Attributes
    ----------
    field : str or None
        Name of the offending parameter, when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class InstabilityError(RuntimeError):
    """The forward solver failed on a parameter set (simulated instability)."""


class ModelFormatError(ValueError):
    """A model file cannot be decoded."""


class ModelVersionError(ModelFormatError):
    def __init__(self, found, expected):
        super().__init__(
            f"model file format version {found} is not supported "
            f"(this build reads version {expected})"
        )
        self.found = found
        self.expected = expected


class ModelCorruptError(ModelFormatError):
    """Truncated payload or checksum mismatch."""


class TrainingDivergedError(FloatingPointError):
    """The training loss became NaN or infinite."""


class DegenerateIntervalError(ValueError):
    """A credible interval collapsed to zero width."""


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` is the dotted path of the bad entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
