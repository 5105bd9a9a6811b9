class OadetError(Exception):
    """Base class for every error raised by oadet."""


class DimensionError(OadetError, ValueError):
    """Tensor or array shapes do not conform."""


class ContractError(OadetError, ValueError):
    """An operation was called outside its preconditions."""


class ConfigError(OadetError, ValueError):
    """A hyperparameter or run setting is invalid."""


class FormatError(OadetError, ValueError):
    """A file or input frame could not be decoded."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NonFiniteError(OadetError, RuntimeError):
    """A loss or gradient became NaN or infinite."""
