"""Direct gradient optimization of console parameters against a reference.

Works on unconstrained logits squashed through a sigmoid so theta stays
inside (0, 1), with a first/second-moment adaptive update (0.9 / 0.999).
Returns the best theta seen and the per-step loss trace; runs are
deterministic for a given configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .audio import AudioBuffer
from .errors import ValidationError
from .features import LossConfig, reference_families, style_loss_tensor
from .grad import _reference_tensor, _track_tensors
from .console import render_mix_tensor
from .params import denormalize_tensor, neutral_theta, theta_dim

LOGIT_CLIP = 1e-4


@dataclass
class OptimizeConfig:
    steps: int = 500
    lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_delta: float = 1e-6
    early_stop_window: int = 25
    seed: int = 0
    init_theta: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")


def _logit(theta: np.ndarray) -> np.ndarray:
    t = np.clip(theta, LOGIT_CLIP, 1.0 - LOGIT_CLIP)
    return np.log(t / (1.0 - t))


def optimize_params(
    tracks: Sequence[AudioBuffer],
    reference: AudioBuffer,
    loss_config: LossConfig | None = None,
    opt_config: OptimizeConfig | None = None,
    progress: Callable[[int, int, float], None] | None = None,
    should_stop: Callable[[], bool] | None = None,
) -> tuple[np.ndarray, list[float]]:
    """Gradient-descend theta from neutral (or a given start) toward the reference.

    progress(step, total, loss) fires once per step; should_stop() is
    polled per step and ends the run early with the best theta so far.
    """
    config = loss_config or LossConfig()
    opt = opt_config or OptimizeConfig()
    track_ts, fs = _track_tensors(tracks)
    n = len(track_ts)
    ref_fams = reference_families(_reference_tensor(reference, fs), fs, config)

    init = opt.init_theta if opt.init_theta is not None else neutral_theta(n)
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (theta_dim(n),):
        raise ValidationError(f"init_theta must have shape ({theta_dim(n)},)")

    z = torch.tensor(_logit(init), dtype=torch.float64, requires_grad=True)
    m = torch.zeros_like(z)
    v = torch.zeros_like(z)

    best_loss = np.inf
    best_theta = init.copy()
    best_history: list[float] = []
    trace: list[float] = []

    for step in range(opt.steps):
        if should_stop is not None and should_stop():
            break
        theta = torch.sigmoid(z)
        phys = denormalize_tensor(theta, n)
        mix = render_mix_tensor(track_ts, phys, fs)
        loss = style_loss_tensor(mix, ref_fams, fs, config)
        loss_f = float(loss.detach())
        trace.append(loss_f)
        if loss_f < best_loss:
            best_loss = loss_f
            best_theta = theta.detach().numpy().copy()
        best_history.append(best_loss)
        if progress is not None:
            progress(step + 1, opt.steps, loss_f)
        if (
            len(best_history) > opt.early_stop_window
            and best_history[-opt.early_stop_window - 1] - best_loss < opt.early_stop_delta
        ):
            break

        (grad,) = torch.autograd.grad(loss, z)
        with torch.no_grad():
            m.mul_(opt.beta1).add_(grad, alpha=1.0 - opt.beta1)
            v.mul_(opt.beta2).addcmul_(grad, grad, value=1.0 - opt.beta2)
            t = step + 1
            m_hat = m / (1.0 - opt.beta1**t)
            v_hat = v / (1.0 - opt.beta2**t)
            z -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps)

    return best_theta, trace
