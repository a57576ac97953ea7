"""Audio buffers, WAV I/O, resampling and segment extraction.

All engine DSP runs on float64 arrays shaped (channels, n_samples) with
nominal full scale +-1.0.  WAV files are read in PCM16/PCM24/float32
flavours and always written as IEEE float32, which round-trips engine
buffers bit-exactly.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.io.wavfile import WavFileWarning
from scipy.signal import resample_poly

from .errors import FormatError, ParseError, RangeError, ValidationError

ENGINE_RATE = 44100


@dataclass
class Segment:
    """Half-open time window in seconds."""

    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if not (0 <= self.start_s < self.end_s):
            raise ValidationError(
                f"segment requires 0 <= start < end, got [{self.start_s}, {self.end_s}]"
            )

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


class AudioBuffer:
    """Multichannel sample matrix with a sample rate.

    samples has shape (channels, n); channels is 1 or 2; zero-length
    buffers are valid.
    """

    __slots__ = ("samples", "sample_rate")

    def __init__(self, samples: np.ndarray, sample_rate: int):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2:
            raise ValidationError(f"samples must be 1-D or 2-D, got ndim={samples.ndim}")
        if samples.shape[0] not in (1, 2):
            raise FormatError(f"unsupported channel count {samples.shape[0]}")
        if sample_rate <= 0:
            raise ValidationError(f"sample_rate must be > 0, got {sample_rate}")
        self.samples = samples
        self.sample_rate = int(sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate

    def mono(self) -> "AudioBuffer":
        """Downmix to mono by (L+R)/2; identity for mono input."""
        if self.channels == 1:
            return self
        return AudioBuffer(self.samples.mean(axis=0, keepdims=True), self.sample_rate)

    def to_stereo(self) -> "AudioBuffer":
        """Duplicate a mono channel; identity for stereo input."""
        if self.channels == 2:
            return self
        return AudioBuffer(np.vstack([self.samples, self.samples]), self.sample_rate)

    def __repr__(self) -> str:
        return (
            f"AudioBuffer(channels={self.channels}, n={self.n_samples}, "
            f"rate={self.sample_rate})"
        )


def load_wav(path) -> AudioBuffer:
    """Read a PCM16/PCM24/float32 WAV with 1 or 2 channels.

    Integer samples are scaled by 2**(bits-1) to +-1.0 full scale;
    float32 samples are taken bit-exact.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", WavFileWarning)
            rate, data = wavfile.read(str(path))
    except WavFileWarning as exc:
        raise ParseError(f"{path}: truncated or malformed WAV ({exc})") from exc
    except ValueError as exc:
        msg = str(exc)
        if "not understood" in msg or "Unknown wave file format" in msg:
            raise FormatError(f"{path}: {msg}") from exc
        raise ParseError(f"{path}: {msg}") from exc
    except (struct.error, EOFError) as exc:
        raise ParseError(f"{path}: truncated WAV ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # 24-bit PCM arrives left-shifted into int32, so 2**31 scaling
        # equals the spec's 2**23 on the original 24-bit values
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}")

    if samples.ndim == 1:
        samples = samples[np.newaxis, :]
    else:
        if samples.shape[1] > 2:
            raise FormatError(f"{path}: unsupported channel count {samples.shape[1]}")
        samples = samples.T
    return AudioBuffer(samples, rate)


def write_wav(buffer: AudioBuffer, path) -> None:
    """Write an IEEE float32 WAV; load_wav round-trips it bit-exactly."""
    data = buffer.samples.astype(np.float32)
    if buffer.channels == 1:
        out = data[0]
    else:
        out = data.T
    try:
        wavfile.write(str(path), buffer.sample_rate, out)
    except OSError:
        raise


def wav_bytes(buffer: AudioBuffer) -> bytes:
    """Serialize to float32 WAV bytes in memory (service audio endpoint)."""
    import io

    data = buffer.samples.astype(np.float32)
    out = data[0] if buffer.channels == 1 else data.T
    bio = io.BytesIO()
    wavfile.write(bio, buffer.sample_rate, out)
    return bio.getvalue()


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Polyphase resampling (Kaiser-windowed sinc) preserving duration.

    Returns the input unchanged when rates already match.
    """
    if target_rate <= 0:
        raise ValidationError(f"target_rate must be > 0, got {target_rate}")
    if target_rate == buffer.sample_rate:
        return buffer
    if buffer.n_samples == 0:
        return AudioBuffer(np.zeros((buffer.channels, 0)), target_rate)
    frac = Fraction(int(target_rate), int(buffer.sample_rate))
    out = resample_poly(buffer.samples, frac.numerator, frac.denominator, axis=1)
    return AudioBuffer(out, target_rate)


def extract_segment(buffer: AudioBuffer, segment: Segment) -> AudioBuffer:
    """Return samples [round(start*fs), round(end*fs)); end clamps to duration."""
    fs = buffer.sample_rate
    i0 = int(np.rint(segment.start_s * fs))
    i1 = int(np.rint(segment.end_s * fs))
    if i0 >= buffer.n_samples:
        raise RangeError(
            f"segment start {segment.start_s}s is at or beyond duration "
            f"{buffer.duration_s:.6f}s"
        )
    i1 = min(i1, buffer.n_samples)
    return AudioBuffer(buffer.samples[:, i0:i1].copy(), fs)


def segment_length(segment: Segment, fs: int) -> int:
    """Sample count of a segment before any clamping."""
    return int(np.rint(segment.end_s * fs)) - int(np.rint(segment.start_s * fs))


def pad_to_length(buffer: AudioBuffer, n: int) -> AudioBuffer:
    """Zero-pad on the right to exactly n samples (no-op when already there)."""
    if buffer.n_samples == n:
        return buffer
    if buffer.n_samples > n:
        return AudioBuffer(buffer.samples[:, :n].copy(), buffer.sample_rate)
    pad = np.zeros((buffer.channels, n - buffer.n_samples))
    return AudioBuffer(np.hstack([buffer.samples, pad]), buffer.sample_rate)
