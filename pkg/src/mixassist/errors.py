"""Exception taxonomy shared across the engine, CLI and service."""


class MixAssistError(Exception):
    """Base class; CLI maps these to exit code 1."""


class ValidationError(MixAssistError):
    """Input violates a documented precondition."""


class ShapeError(ValidationError):
    """Vector/track-count mismatch."""


class CapacityError(ValidationError):
    """More than 20 active tracks."""


class EmptySessionError(ValidationError):
    """No active (non-muted) tracks to mix."""


class RangeError(ValidationError):
    """Segment start beyond the audio duration."""


class NotFoundError(MixAssistError):
    """Named track, preset or resource does not exist."""


class FormatError(MixAssistError):
    """Unsupported or malformed file format (codec, channel count, version)."""


class ParseError(FormatError):
    """File is recognisably the right container but truncated or corrupt."""
