"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ParameterError(ValueError):
    """An argument is outside the supported range or combination."""


class StateError(RuntimeError):
    """Required state is missing or inconsistent (e.g. forward/backward mismatch)."""


class FormatError(ValueError):
    """A serialized container is malformed.

    ``offset`` is the byte position of the first violation.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(ValueError):
    """An experiment config file or override is invalid."""
