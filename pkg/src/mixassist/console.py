"""The differentiable mixing console.

Per-track channel strip: gain -> constant-power pan -> 4-band EQ ->
compressor (EQ and compressor operate on the post-pan stereo signal,
compressor detector linked).  Strip outputs sum in track order into the
master bus: EQ -> linked compressor -> fader.  No implicit clipping or
normalization anywhere; renders are stateless (zero initial filter and
detector state).

Public operations take and return AudioBuffer; the *_tensor functions
are the same math on torch tensors and accept parameters with gradient
history, which is what the grad module differentiates through.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from . import dsp
from .audio import AudioBuffer
from .errors import CapacityError, EmptySessionError, ShapeError, ValidationError
from .params import (
    MASTER_SIZE,
    STRIP_SIZE,
    ChannelStripParams,
    ConsoleParams,
    EqBand,
    CompressorParams,
    _physical_vector,
)

MAX_TRACKS = 20


def apply_gain(x: AudioBuffer, gain_db: float) -> AudioBuffer:
    """y[n] = x[n] * 10^(gain_db/20) on a mono buffer."""
    if x.channels != 1:
        raise ValidationError("apply_gain expects a mono buffer")
    with torch.no_grad():
        y = dsp.gain(dsp.as_audio_tensor(x.samples), gain_db)
    return AudioBuffer(y.numpy(), x.sample_rate)


def apply_pan(x: AudioBuffer, pan: float) -> AudioBuffer:
    """Constant-power pan of mono to stereo; 0 hard left, 1 hard right."""
    if x.channels != 1:
        raise ValidationError("apply_pan expects a mono buffer")
    if not 0.0 <= pan <= 1.0:
        raise ValidationError(f"pan must lie in [0, 1], got {pan}")
    with torch.no_grad():
        y = dsp.pan(dsp.as_audio_tensor(x.samples), pan)
    return AudioBuffer(y.numpy(), x.sample_rate)


def apply_eq(x: AudioBuffer, bands: Sequence[EqBand]) -> AudioBuffer:
    """Cascade of four cookbook biquads, applied per channel from zero state."""
    with torch.no_grad():
        y = dsp.eq_cascade(
            dsp.as_audio_tensor(x.samples),
            [_band_tensors(b) for b in bands],
            x.sample_rate,
        )
    return AudioBuffer(y.numpy(), x.sample_rate)


def apply_compressor(
    x: AudioBuffer, p: CompressorParams, link_channels: bool = True
) -> AudioBuffer:
    with torch.no_grad():
        y = dsp.compress(
            dsp.as_audio_tensor(x.samples),
            p.threshold_db,
            p.ratio,
            p.attack_ms,
            p.release_ms,
            p.knee_db,
            p.makeup_db,
            x.sample_rate,
            link_channels=link_channels,
        )
    return AudioBuffer(y.numpy(), x.sample_rate)


def render_strip(x: AudioBuffer, p: ChannelStripParams) -> AudioBuffer:
    if x.channels != 1:
        raise ValidationError("render_strip expects a mono buffer")
    phys = _strip_vector(p)
    with torch.no_grad():
        y = strip_tensor(
            dsp.as_audio_tensor(x.samples)[0],
            torch.from_numpy(phys),
            x.sample_rate,
        )
    return AudioBuffer(y.numpy(), x.sample_rate)


def render_mix(tracks: Sequence[AudioBuffer], params: ConsoleParams) -> AudioBuffer:
    """Sum of strip renders through the master bus; stereo out."""
    _check_track_list(tracks)
    if len(params.strips) != len(tracks):
        raise ShapeError(
            f"{len(params.strips)} strips for {len(tracks)} tracks"
        )
    fs = tracks[0].sample_rate
    phys = _physical_vector(params)
    track_ts = [dsp.as_audio_tensor(t.samples)[0] for t in tracks]
    with torch.no_grad():
        y = render_mix_tensor(track_ts, torch.from_numpy(phys), fs)
    return AudioBuffer(y.numpy(), fs)


def _check_track_list(tracks: Sequence[AudioBuffer]) -> None:
    if len(tracks) == 0:
        raise EmptySessionError("render_mix needs at least one track")
    if len(tracks) > MAX_TRACKS:
        raise CapacityError(f"{len(tracks)} tracks exceeds the {MAX_TRACKS}-track limit")
    lengths = {t.n_samples for t in tracks}
    if len(lengths) != 1:
        raise ValidationError(
            f"tracks must have equal lengths (zero-pad upstream), got {sorted(lengths)}"
        )
    rates = {t.sample_rate for t in tracks}
    if len(rates) != 1:
        raise ValidationError(f"tracks must share one sample rate, got {sorted(rates)}")
    for t in tracks:
        if t.channels != 1:
            raise ValidationError("render_mix tracks must be mono")


# ---------------------------------------------------------------------------
# tensor path


def _band_tensors(b: EqBand):
    return (
        b.band_type,
        dsp._scalar(b.freq_hz),
        dsp._scalar(b.gain_db),
        dsp._scalar(b.q),
    )


def _strip_vector(p: ChannelStripParams) -> np.ndarray:
    from .params import _eq_values, _comp_values

    vec = [p.gain_db, p.pan] + _eq_values(p.eq) + _comp_values(p.comp)
    return np.array(vec, dtype=np.float64)


_EQ_TYPES = ("low_shelf", "peak", "peak", "high_shelf")


def _eq_bands_from_slice(eq: torch.Tensor):
    return [
        (_EQ_TYPES[i], eq[3 * i], eq[3 * i + 1], eq[3 * i + 2]) for i in range(4)
    ]


def strip_tensor(x: torch.Tensor, phys: torch.Tensor, fs: float) -> torch.Tensor:
    """Channel strip on a mono (n,) tensor given its 20 physical values."""
    if phys.shape[0] != STRIP_SIZE:
        raise ShapeError(f"strip parameter vector has {phys.shape[0]} != {STRIP_SIZE} entries")
    y = dsp.gain(x.unsqueeze(0), phys[0])
    y = dsp.pan(y, phys[1])
    y = dsp.eq_cascade(y, _eq_bands_from_slice(phys[2:14]), fs)
    y = dsp.compress(
        y, phys[14], phys[15], phys[16], phys[17], phys[18], phys[19], fs,
        link_channels=True,
    )
    return y


def master_tensor(mix: torch.Tensor, phys: torch.Tensor, fs: float) -> torch.Tensor:
    """Master bus (EQ -> linked compressor -> fader) on a stereo (2, n) tensor."""
    if phys.shape[0] != MASTER_SIZE:
        raise ShapeError(f"master parameter vector has {phys.shape[0]} != {MASTER_SIZE} entries")
    y = dsp.eq_cascade(mix, _eq_bands_from_slice(phys[0:12]), fs)
    y = dsp.compress(
        y, phys[12], phys[13], phys[14], phys[15], phys[16], phys[17], fs,
        link_channels=True,
    )
    return dsp.gain(y, phys[18])


def render_mix_tensor(
    tracks: Sequence[torch.Tensor], phys: torch.Tensor, fs: float
) -> torch.Tensor:
    """Full console on mono (n,) track tensors; phys is the flat physical vector."""
    n = len(tracks)
    expected = STRIP_SIZE * n + MASTER_SIZE
    if phys.shape[0] != expected:
        raise ShapeError(f"physical vector length {phys.shape[0]} != {expected}")
    mix = None
    for i, x in enumerate(tracks):
        out = strip_tensor(x, phys[i * STRIP_SIZE : (i + 1) * STRIP_SIZE], fs)
        mix = out if mix is None else mix + out  # fixed track-order summation
    return master_tensor(mix, phys[n * STRIP_SIZE :], fs)
