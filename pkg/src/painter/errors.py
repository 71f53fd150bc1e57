"""Exception types shared across the toolkit."""


class PainterError(Exception):
    """Base class for all toolkit errors."""


class EmptyMask(PainterError):
    """Raised when an operation needs at least one set pixel and got none."""


class DomainError(PainterError):
    """An argument is outside its documented domain."""


class ShapeError(PainterError):
    """Array/tensor shapes disagree with the operation's contract."""


class RangeError(PainterError):
    """A timestep or index is outside its valid range."""


class EmptyPrompt(PainterError):
    """Prompt contains no actual tokens (only start/end specials)."""


class MissingTap(PainterError):
    """Branch taps do not cover every injection site the spec declares."""


class SchemaError(PainterError):
    """Serialized data does not match the documented layout."""


class IoError(PainterError):
    """Filesystem-level failure while reading or writing an artifact."""


class ClientError(PainterError):
    """An external model client failed or returned garbage."""


class ModelNotLoaded(PainterError):
    """Inference was requested before a checkpoint was loaded."""
