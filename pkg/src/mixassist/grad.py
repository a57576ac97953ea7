"""Gradient engine: exact derivatives of the style loss through the console.

loss_and_grad builds the render-and-compare graph on float64 tensors
and backpropagates to the normalized parameter vector.  Gradients are
exact everywhere except at the console's piecewise switching points
(compressor attack/release, detector floor, knee-region edges, peak
argmax), where the branch taken on the forward pass is held fixed.

gradcheck verifies the analytic gradient against central finite
differences on randomized configurations, flagging coordinates whose
probe pair crossed a branch boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from . import features as feat
from . import synth
from .audio import AudioBuffer
from .console import render_mix_tensor
from .dsp import as_audio_tensor, branch_probe, signature_flip_fractions
from .errors import ShapeError, ValidationError
from .features import LossConfig, reference_families, style_loss_tensor
from .params import denormalize_tensor, theta_dim


def _track_tensors(tracks: Sequence) -> tuple[list[torch.Tensor], int]:
    ts = []
    fs = None
    for t in tracks:
        if isinstance(t, AudioBuffer):
            if t.channels != 1:
                raise ValidationError("gradient path expects mono tracks")
            if fs is None:
                fs = t.sample_rate
            elif fs != t.sample_rate:
                raise ValidationError("tracks must share one sample rate")
            ts.append(as_audio_tensor(t.samples)[0])
        else:
            ts.append(as_audio_tensor(np.asarray(t))[0])
    if fs is None:
        fs = 44100
    lengths = {int(t.shape[0]) for t in ts}
    if len(lengths) != 1:
        raise ValidationError("tracks must have equal lengths")
    return ts, fs


def _reference_tensor(reference, fs: int) -> torch.Tensor:
    if isinstance(reference, AudioBuffer):
        if reference.sample_rate != fs:
            raise ValidationError(
                f"reference rate {reference.sample_rate} != track rate {fs}"
            )
        return as_audio_tensor(reference.to_stereo().samples)
    t = as_audio_tensor(np.asarray(reference))
    if t.shape[0] == 1:
        t = t.repeat(2, 1)
    return t


def _check_theta(theta: np.ndarray, n_tracks: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != theta_dim(n_tracks):
        raise ShapeError(
            f"theta length {theta.shape} != {theta_dim(n_tracks)} for {n_tracks} tracks"
        )
    if np.any(theta < 0.0) or np.any(theta > 1.0):
        raise ValidationError("theta entries must lie in [0, 1]")
    return theta


def loss_and_grad(
    tracks: Sequence,
    theta: np.ndarray,
    reference,
    loss_config: LossConfig | None = None,
) -> tuple[float, np.ndarray]:
    """Style loss of the rendered mix against the reference, and d loss / d theta."""
    config = loss_config or LossConfig()
    track_ts, fs = _track_tensors(tracks)
    theta = _check_theta(theta, len(track_ts))
    ref_fams = reference_families(_reference_tensor(reference, fs), fs, config)

    theta_t = torch.tensor(theta, dtype=torch.float64, requires_grad=True)
    phys = denormalize_tensor(theta_t, len(track_ts))
    mix = render_mix_tensor(track_ts, phys, fs)
    loss = style_loss_tensor(mix, ref_fams, fs, config)
    loss.backward()
    return float(loss.detach()), theta_t.grad.detach().numpy().copy()


def loss_value(
    track_ts: list[torch.Tensor],
    theta: np.ndarray,
    ref_fams,
    fs: int,
    config: LossConfig,
) -> float:
    """Forward-only loss used by the finite-difference harness."""
    with torch.no_grad():
        phys = denormalize_tensor(torch.from_numpy(theta), len(track_ts))
        mix = render_mix_tensor(track_ts, phys, fs)
        return float(style_loss_tensor(mix, ref_fams, fs, config))


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


@dataclass
class GradReport:
    """Analytic-vs-finite-difference comparison for one random configuration.

    Coordinates are excluded from the pass basis for two reasons, both
    decided without looking at the analytic gradient:

    * boundary: the probe pair took different branches somewhere
      (attack/release switch, detector floor, knee region, channel-link
      or peak argmax), so the central difference straddles a kink;
    * fd_limited: the central difference disagrees with its own
      half-step estimate, i.e. the curvature is too high for the
      requested step to resolve the true derivative.
    """

    config_index: int
    loss: float
    analytic: np.ndarray
    finite_diff: np.ndarray
    rel_err: np.ndarray
    boundary: np.ndarray  # bool; FD probe pair crossed a piecewise branch
    fd_limited: np.ndarray  # bool; FD not step-converged at the requested step
    rel_tol: float
    min_pass_fraction: float

    @property
    def n_coords(self) -> int:
        return int(self.analytic.shape[0])

    @property
    def n_boundary(self) -> int:
        return int(self.boundary.sum())

    @property
    def n_fd_limited(self) -> int:
        return int(self.fd_limited.sum())

    @property
    def basis(self) -> np.ndarray:
        return ~(self.boundary | self.fd_limited)

    @property
    def pass_fraction(self) -> float:
        ok = self.rel_err[self.basis] < self.rel_tol
        return float(ok.mean()) if ok.size else 1.0

    @property
    def passed(self) -> bool:
        return self.pass_fraction >= self.min_pass_fraction

    def to_dict(self) -> dict:
        return {
            "config_index": self.config_index,
            "loss": self.loss,
            "analytic": self.analytic.tolist(),
            "finite_diff": self.finite_diff.tolist(),
            "rel_err": self.rel_err.tolist(),
            "boundary": self.boundary.tolist(),
            "fd_limited": self.fd_limited.tolist(),
            "rel_tol": self.rel_tol,
            "min_pass_fraction": self.min_pass_fraction,
            "n_boundary": self.n_boundary,
            "n_fd_limited": self.n_fd_limited,
            "pass_fraction": self.pass_fraction,
            "passed": self.passed,
        }


def check_config(
    tracks: Sequence,
    theta: np.ndarray,
    reference,
    loss_config: LossConfig | None = None,
    fd_step: float = 1e-3,
    rel_tol: float = 1e-3,
    min_pass_fraction: float = 0.95,
    config_index: int = 0,
) -> GradReport:
    """Compare loss_and_grad with central differences for one configuration."""
    config = loss_config or LossConfig()
    track_ts, fs = _track_tensors(tracks)
    theta = _check_theta(theta, len(track_ts))
    ref_fams = reference_families(_reference_tensor(reference, fs), fs, config)

    loss, analytic = loss_and_grad(tracks, theta, reference, config)

    def fd_at(i: int, h: float, with_sigs: bool):
        plus = theta.copy()
        plus[i] += h
        minus = theta.copy()
        minus[i] -= h
        with branch_probe() as sig_plus:
            f_plus = loss_value(track_ts, plus, ref_fams, fs, config)
        with branch_probe() as sig_minus:
            f_minus = loss_value(track_ts, minus, ref_fams, fs, config)
        est = (f_plus - f_minus) / (2.0 * h)
        if not with_sigs:
            return est, False
        flips = signature_flip_fractions(sig_plus, sig_minus)
        return est, any(v > 0 for v in flips.values())

    dim = theta.shape[0]
    fd = np.empty(dim)
    boundary = np.zeros(dim, dtype=bool)
    fd_limited = np.zeros(dim, dtype=bool)
    for i in range(dim):
        fd[i], boundary[i] = fd_at(i, fd_step, with_sigs=True)
        if not boundary[i] and _rel_err(analytic[i], fd[i]) >= rel_tol:
            # smooth path but mismatched: test whether FD itself is
            # step-converged before counting it against the gradient;
            # for an O(h^2) central difference the implied truncation
            # error of fd(h) is (4/3)|fd(h) - fd(h/2)| (Richardson)
            fd_half, _ = fd_at(i, fd_step / 2.0, with_sigs=False)
            err_est = (4.0 / 3.0) * abs(fd[i] - fd_half)
            scale = max(abs(fd[i]), abs(fd_half), 1e-8)
            fd_limited[i] = err_est / scale >= rel_tol

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    rel_err = np.abs(analytic - fd) / denom
    return GradReport(
        config_index=config_index,
        loss=loss,
        analytic=analytic,
        finite_diff=fd,
        rel_err=rel_err,
        boundary=boundary,
        fd_limited=fd_limited,
        rel_tol=rel_tol,
        min_pass_fraction=min_pass_fraction,
    )


def random_config(
    rng: np.random.Generator,
    n_tracks: int = 2,
    duration_s: float = 0.25,
    fs: int = 44100,
) -> tuple[list[AudioBuffer], np.ndarray, AudioBuffer]:
    """A (tracks, theta, reference) triple with a generic rendered reference."""
    tracks = [synth.random_test_signal(rng, duration_s, fs) for _ in range(n_tracks)]
    theta = rng.uniform(0.05, 0.95, size=theta_dim(n_tracks))
    ref_tracks = [synth.random_test_signal(rng, duration_s, fs) for _ in range(n_tracks)]
    ref_theta = rng.uniform(0.1, 0.9, size=theta_dim(n_tracks))
    with torch.no_grad():
        ref_ts = [as_audio_tensor(t.samples)[0] for t in ref_tracks]
        phys = denormalize_tensor(torch.from_numpy(ref_theta), n_tracks)
        ref = render_mix_tensor(ref_ts, phys, fs)
    return tracks, theta, AudioBuffer(ref.numpy(), fs)


def gradcheck(
    seed: int = 0,
    n_configs: int = 20,
    n_tracks: int = 2,
    duration_s: float = 0.25,
    fs: int = 44100,
    fd_step: float = 1e-3,
    rel_tol: float = 1e-3,
    min_pass_fraction: float = 0.95,
    loss_config: LossConfig | None = None,
) -> list[GradReport]:
    """Seeded analytic-vs-FD sweep over random short configurations."""
    rng = np.random.default_rng(seed)
    reports = []
    for idx in range(n_configs):
        tracks, theta, reference = random_config(rng, n_tracks, duration_s, fs)
        reports.append(
            check_config(
                tracks,
                theta,
                reference,
                loss_config,
                fd_step=fd_step,
                rel_tol=rel_tol,
                min_pass_fraction=min_pass_fraction,
                config_index=idx,
            )
        )
    return reports
