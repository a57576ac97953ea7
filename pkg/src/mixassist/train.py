"""Self-supervised training of the neural controller.

Each step samples a stem session, takes two disjoint segments A and B,
renders B through the console at random parameters to serve as the
style reference, predicts parameters for A, and descends the style
loss of the rendered A-mix against that reference through both the
console and the controller.  Runs are deterministic for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .audio import AudioBuffer, Segment, extract_segment
from .console import render_mix_tensor
from .controller import ControllerWeights, init_weights, predict_theta_tensor
from .dsp import as_audio_tensor
from .errors import ValidationError
from .features import LossConfig, reference_families, style_loss_tensor
from .params import denormalize_tensor, theta_dim

MIN_STEMS = 2
MAX_STEMS = 8
MIN_STEM_SECONDS = 20.0


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 4  # averages out per-sample reference difficulty
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float = 1.0  # sampled references have heavy-tailed gradients
    seed: int = 0
    segment_s: float = 1.0
    theta_low: float = 0.3  # keeps sampled reference mixes audible and sane
    theta_high: float = 0.7

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0.0 <= self.theta_low < self.theta_high <= 1.0:
            raise ValidationError("need 0 <= theta_low < theta_high <= 1")


def validate_dataset(dataset: Sequence[Sequence[AudioBuffer]], segment_s: float) -> None:
    if len(dataset) == 0:
        raise ValidationError("training dataset has no sessions")
    for i, stems in enumerate(dataset):
        if not MIN_STEMS <= len(stems) <= MAX_STEMS:
            raise ValidationError(
                f"session {i} has {len(stems)} stems, need {MIN_STEMS}..{MAX_STEMS}"
            )
        for j, stem in enumerate(stems):
            if stem.channels != 1:
                raise ValidationError(f"session {i} stem {j} must be mono")
            if stem.duration_s < MIN_STEM_SECONDS:
                raise ValidationError(
                    f"session {i} stem {j} is {stem.duration_s:.1f}s, "
                    f"need >= {MIN_STEM_SECONDS}s"
                )
            if stem.duration_s < 3 * segment_s:
                raise ValidationError(
                    f"session {i} stem {j} too short for two disjoint "
                    f"{segment_s}s segments"
                )


def _disjoint_segments(
    rng: np.random.Generator, duration_s: float, segment_s: float
) -> tuple[Segment, Segment]:
    a_start = rng.uniform(0.0, duration_s - 2.0 * segment_s)
    b_start = rng.uniform(a_start + segment_s, duration_s - segment_s)
    return (
        Segment(a_start, a_start + segment_s),
        Segment(b_start, b_start + segment_s),
    )


def train(
    dataset: Sequence[Sequence[AudioBuffer]],
    config: TrainConfig | None = None,
    initial: ControllerWeights | None = None,
    loss_config: LossConfig | None = None,
    progress: Callable[[int, int, float], None] | None = None,
) -> tuple[ControllerWeights, list[dict]]:
    """Run the self-supervised loop; returns trained weights and the step log."""
    config = config or TrainConfig()
    lcfg = loss_config or LossConfig()
    validate_dataset(dataset, config.segment_s)
    rng = np.random.default_rng(config.seed)
    weights = initial if initial is not None else init_weights(config.seed)
    w = weights.tensors(requires_grad=True)
    m = {k: torch.zeros_like(t) for k, t in w.items()}
    v = {k: torch.zeros_like(t) for k, t in w.items()}
    log: list[dict] = []

    for step in range(config.steps):
        batch_losses = []
        for _ in range(config.batch_size):
            stems = dataset[int(rng.integers(0, len(dataset)))]
            duration = min(s.duration_s for s in stems)
            seg_a, seg_b = _disjoint_segments(rng, duration, config.segment_s)
            fs = stems[0].sample_rate
            a_ts = [as_audio_tensor(extract_segment(s, seg_a).samples)[0] for s in stems]
            b_ts = [as_audio_tensor(extract_segment(s, seg_b).samples)[0] for s in stems]

            theta_rand = rng.uniform(
                config.theta_low, config.theta_high, size=theta_dim(len(stems))
            )
            with torch.no_grad():
                phys_rand = denormalize_tensor(torch.from_numpy(theta_rand), len(stems))
                reference = render_mix_tensor(b_ts, phys_rand, fs)
                ref_fams = reference_families(reference, fs, lcfg)

            theta_hat, _ = predict_theta_tensor(a_ts, reference, w, fs, lcfg.frame_s)
            phys = denormalize_tensor(theta_hat, len(stems))
            mix = render_mix_tensor(a_ts, phys, fs)
            batch_losses.append(style_loss_tensor(mix, ref_fams, fs, lcfg))
        loss = sum(batch_losses) / len(batch_losses)
        loss_f = float(loss.detach())
        log.append({"step": step, "loss": loss_f, "seed": config.seed})
        if progress is not None:
            progress(step + 1, config.steps, loss_f)

        grads = torch.autograd.grad(loss, list(w.values()), allow_unused=True)
        with torch.no_grad():
            if config.max_grad_norm > 0:
                total = torch.sqrt(
                    sum((g**2).sum() for g in grads if g is not None)
                )
                if float(total) > config.max_grad_norm:
                    grads = tuple(
                        None if g is None else g * (config.max_grad_norm / total)
                        for g in grads
                    )
            t = step + 1
            for (name, tensor), g in zip(w.items(), grads):
                if g is None:
                    continue
                m[name].mul_(config.beta1).add_(g, alpha=1.0 - config.beta1)
                v[name].mul_(config.beta2).addcmul_(g, g, value=1.0 - config.beta2)
                m_hat = m[name] / (1.0 - config.beta1**t)
                v_hat = v[name] / (1.0 - config.beta2**t)
                tensor -= config.lr * m_hat / (v_hat.sqrt() + config.eps)

    arrays = {k: t.detach().numpy().astype(np.float32) for k, t in w.items()}
    return ControllerWeights(arrays), log


def write_log(log: list[dict], path) -> None:
    """JSON-lines, one record per step."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record) + "\n")
