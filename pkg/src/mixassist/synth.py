"""Deterministic synthetic audio: test signals, training stems, preset songs.

Everything here is a pure function of an explicit numpy Generator so
gradcheck configs, training runs and preset rendering are reproducible
from a seed.
"""

from __future__ import annotations

import numpy as np

from .audio import ENGINE_RATE, AudioBuffer


def sine(freq_hz: float, duration_s: float, fs: int = ENGINE_RATE, amp: float = 0.5,
         phase: float = 0.0) -> np.ndarray:
    t = np.arange(int(round(duration_s * fs))) / fs
    return amp * np.sin(2 * np.pi * freq_hz * t + phase)


def _spectral_noise(rng: np.random.Generator, n: int, fs: int, lo_hz: float,
                    hi_hz: float, slope: float = 0.0) -> np.ndarray:
    """Band-limited noise shaped as f^slope, unit peak."""
    white = rng.normal(size=n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    shape = np.zeros_like(freqs)
    band = (freqs >= lo_hz) & (freqs <= hi_hz)
    with np.errstate(divide="ignore"):
        shape[band] = np.where(freqs[band] > 0, freqs[band] ** slope, 0.0)
    out = np.fft.irfft(spec * shape, n=n)
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def pulse_train(rng: np.random.Generator, duration_s: float, fs: int = ENGINE_RATE,
                rate_hz: float = 2.0, decay_ms: float = 60.0) -> np.ndarray:
    n = int(round(duration_s * fs))
    out = np.zeros(n)
    period = int(fs / rate_hz)
    decay = np.exp(-np.arange(min(period, n)) / (decay_ms * 1e-3 * fs))
    body = decay * np.sin(2 * np.pi * 180.0 * np.arange(decay.shape[0]) / fs)
    for start in range(0, n, period):
        stop = min(start + body.shape[0], n)
        out[start:stop] += body[: stop - start]
    amp = 0.4 + 0.3 * rng.random()
    peak = np.abs(out).max()
    return amp * out / peak if peak > 0 else out


def random_test_signal(rng: np.random.Generator, duration_s: float,
                       fs: int = ENGINE_RATE) -> AudioBuffer:
    """Stationary sine-plus-noise mixture for gradient checks."""
    n = int(round(duration_s * fs))
    x = np.zeros(n)
    for _ in range(rng.integers(1, 4)):
        freq = np.exp(rng.uniform(np.log(80.0), np.log(8000.0)))
        x += rng.uniform(0.1, 0.4) * sine(freq, duration_s, fs, amp=1.0,
                                          phase=rng.uniform(0, 2 * np.pi))
    x += rng.uniform(0.02, 0.1) * _spectral_noise(rng, n, fs, 40.0, 16000.0)
    peak = np.abs(x).max()
    if peak > 0.9:
        x *= 0.9 / peak
    return AudioBuffer(x[np.newaxis, :], fs)


STEM_KINDS = ("bass", "lead", "pad", "noise", "pulse")


def make_stem(rng: np.random.Generator, kind: str, duration_s: float,
              fs: int = ENGINE_RATE) -> AudioBuffer:
    n = int(round(duration_s * fs))
    if kind == "bass":
        f0 = rng.uniform(50.0, 110.0)
        x = sine(f0, duration_s, fs, amp=0.5) + sine(2 * f0, duration_s, fs, amp=0.2)
    elif kind == "lead":
        f0 = rng.uniform(300.0, 900.0)
        x = sum(
            sine(f0 * k, duration_s, fs, amp=0.4 / k, phase=rng.uniform(0, 2 * np.pi))
            for k in range(1, 5)
        )
        vib = 1.0 + 0.2 * np.sin(2 * np.pi * rng.uniform(0.3, 1.0) * np.arange(n) / fs)
        x = x * vib
    elif kind == "pad":
        f0 = rng.uniform(150.0, 350.0)
        x = sum(
            sine(f0 * r, duration_s, fs, amp=0.2, phase=rng.uniform(0, 2 * np.pi))
            for r in (1.0, 1.5, 2.0)
        )
    elif kind == "noise":
        x = 0.3 * _spectral_noise(rng, n, fs, rng.uniform(500, 2000),
                                  rng.uniform(6000, 14000))
    elif kind == "pulse":
        x = pulse_train(rng, duration_s, fs, rate_hz=rng.uniform(1.5, 4.0))
    else:
        raise ValueError(f"unknown stem kind {kind!r}")
    peak = np.abs(x).max()
    if peak > 0.9:
        x = 0.9 * x / peak
    return AudioBuffer(x[np.newaxis, :], fs)


def make_stem_session(rng: np.random.Generator, n_stems: int, duration_s: float,
                      fs: int = ENGINE_RATE) -> list[AudioBuffer]:
    kinds = list(STEM_KINDS)
    picks = [kinds[i % len(kinds)] for i in range(n_stems)]
    rng.shuffle(picks)
    return [make_stem(rng, k, duration_s, fs) for k in picks]


def make_training_dataset(seed: int, n_sessions: int = 4, duration_s: float = 24.0,
                          fs: int = ENGINE_RATE) -> list[list[AudioBuffer]]:
    rng = np.random.default_rng(seed)
    return [
        make_stem_session(rng, int(rng.integers(2, 6)), duration_s, fs)
        for _ in range(n_sessions)
    ]


def make_preset_song(seed: int, duration_s: float = 12.0,
                     fs: int = ENGINE_RATE) -> AudioBuffer:
    """A small rendered multitrack used as a suggested reference song."""
    from .console import render_mix
    from .params import denormalize, neutral_theta, theta_dim

    rng = np.random.default_rng(seed)
    stems = make_stem_session(rng, 4, duration_s, fs)
    theta = neutral_theta(len(stems))
    jitter = rng.uniform(-0.15, 0.15, size=theta_dim(len(stems)))
    theta = np.clip(theta + jitter, 0.02, 0.98)
    mix = render_mix(stems, denormalize(theta, len(stems)))
    peak = np.abs(mix.samples).max()
    if peak > 0.95:
        mix = AudioBuffer(mix.samples * (0.95 / peak), fs)
    return mix
