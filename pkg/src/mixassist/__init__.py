"""mixassist: mixing style transfer with a differentiable console."""

from .audio import AudioBuffer, Segment, load_wav, resample, write_wav
from .errors import MixAssistError
from .params import ConsoleParams, denormalize, neutral_params, normalize
from .session import ReferenceSource, Session, Track

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "Segment",
    "load_wav",
    "write_wav",
    "resample",
    "MixAssistError",
    "ConsoleParams",
    "denormalize",
    "normalize",
    "neutral_params",
    "Session",
    "Track",
    "ReferenceSource",
    "__version__",
]
