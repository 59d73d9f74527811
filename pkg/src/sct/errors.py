"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class ContractError(ValueError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class InputError(ValueError):
    """Runtime input (clip, token grid, ...) does not match the model/config."""


class FormatError(ValueError):
    """A serialized file is malformed; message carries the byte offset."""


class TraceError(ValueError):
    """An attention trace is empty or geometrically inconsistent."""
