"""Neural mix controller: per-track encoder, transformer, parameter heads.

Each element (reference first, then every track) is summarized by the
mean and standard deviation over analysis frames of the 24 style
descriptors, embedded by a small MLP plus a learned type embedding,
and contextualized by a 2-layer, 4-head self-attention encoder with no
positional encoding, which makes per-track outputs equivariant to
track order.  A track head maps each contextual track embedding to the
20 strip parameters; a master head maps the mean-pooled sequence to
the 19 master-bus parameters.  All outputs pass through a sigmoid so
theta lands strictly inside (0, 1).

Weights live in a named, shaped, versioned container serialized as
"MSTW" records with little-endian float32 data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from . import features as feat
from .audio import AudioBuffer
from .console import render_mix_tensor
from .dsp import as_audio_tensor
from .errors import CapacityError, FormatError, ShapeError, ValidationError
from .features import LossConfig, reference_families, style_loss_tensor
from .params import (
    MASTER_SIZE,
    STRIP_SIZE,
    denormalize_tensor,
    neutral_master_theta,
    neutral_strip_theta,
)

WEIGHTS_MAGIC = b"MSTW"
WEIGHTS_VERSION = 1

FEATURE_DIM = 48  # mean+std of the 24 per-frame descriptors
MODEL_DIM = 64
FF_DIM = 128
N_LAYERS = 2
N_HEADS = 4
HEAD_DIM = MODEL_DIM // N_HEADS
MAX_TRACKS = 20

# neutral-parameter logits keep the untrained model predicting a
# passthrough mix; clamp keeps log-scaled minima (ratio 1) finite
_BIAS_CLAMP = 0.02


def weight_schema() -> dict[str, tuple[int, ...]]:
    schema: dict[str, tuple[int, ...]] = {
        "embed.w0": (FEATURE_DIM, MODEL_DIM),
        "embed.b0": (MODEL_DIM,),
        "embed.w1": (MODEL_DIM, MODEL_DIM),
        "embed.b1": (MODEL_DIM,),
        "type_emb": (2, MODEL_DIM),
    }
    for layer in range(N_LAYERS):
        p = f"enc{layer}"
        schema.update(
            {
                f"{p}.ln1.g": (MODEL_DIM,),
                f"{p}.ln1.b": (MODEL_DIM,),
                f"{p}.wq": (MODEL_DIM, MODEL_DIM),
                f"{p}.bq": (MODEL_DIM,),
                f"{p}.wk": (MODEL_DIM, MODEL_DIM),
                f"{p}.bk": (MODEL_DIM,),
                f"{p}.wv": (MODEL_DIM, MODEL_DIM),
                f"{p}.bv": (MODEL_DIM,),
                f"{p}.wo": (MODEL_DIM, MODEL_DIM),
                f"{p}.bo": (MODEL_DIM,),
                f"{p}.ln2.g": (MODEL_DIM,),
                f"{p}.ln2.b": (MODEL_DIM,),
                f"{p}.ff.w0": (MODEL_DIM, FF_DIM),
                f"{p}.ff.b0": (FF_DIM,),
                f"{p}.ff.w1": (FF_DIM, MODEL_DIM),
                f"{p}.ff.b1": (MODEL_DIM,),
            }
        )
    schema.update(
        {
            "final_ln.g": (MODEL_DIM,),
            "final_ln.b": (MODEL_DIM,),
            "track_head.w0": (MODEL_DIM, MODEL_DIM),
            "track_head.b0": (MODEL_DIM,),
            "track_head.w1": (MODEL_DIM, STRIP_SIZE),
            "track_head.b1": (STRIP_SIZE,),
            "master_head.w0": (MODEL_DIM, MODEL_DIM),
            "master_head.b0": (MODEL_DIM,),
            "master_head.w1": (MODEL_DIM, MASTER_SIZE),
            "master_head.b1": (MASTER_SIZE,),
        }
    )
    return schema


@dataclass
class ControllerWeights:
    """Named float32 arrays matching weight_schema(), plus a version tag."""

    arrays: dict[str, np.ndarray]
    version: int = WEIGHTS_VERSION

    def __post_init__(self) -> None:
        schema = weight_schema()
        missing = sorted(set(schema) - set(self.arrays))
        extra = sorted(set(self.arrays) - set(schema))
        if missing or extra:
            raise FormatError(
                f"weight names mismatch: missing {missing}, unexpected {extra}"
            )
        for name, shape in schema.items():
            arr = self.arrays[name]
            if tuple(arr.shape) != shape:
                raise FormatError(
                    f"weight {name!r} has shape {tuple(arr.shape)}, expected {shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise FormatError(f"weight {name!r} contains non-finite values")
            self.arrays[name] = arr.astype(np.float32, copy=False)

    def tensors(self, requires_grad: bool = False) -> dict[str, torch.Tensor]:
        return {
            name: torch.tensor(arr, dtype=torch.float64, requires_grad=requires_grad)
            for name, arr in self.arrays.items()
        }


def _logit(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, _BIAS_CLAMP, 1.0 - _BIAS_CLAMP)
    return np.log(x / (1.0 - x))


def init_weights(seed: int = 0) -> ControllerWeights:
    """Fan-in scaled init; head output layers start small with neutral biases."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in weight_schema().items():
        if name.endswith(".g"):
            arrays[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith(".b") or name.startswith(("embed.b", "track_head.b", "master_head.b")) or ".b" in name:
            arrays[name] = np.zeros(shape, dtype=np.float32)
        elif name == "type_emb":
            arrays[name] = rng.uniform(-0.1, 0.1, size=shape).astype(np.float32)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    # small final layers + neutral logit biases: untrained predictions sit
    # at gain 0 dB, center pan, flat EQ, ratio ~1
    arrays["track_head.w1"] = (0.01 * arrays["track_head.w1"]).astype(np.float32)
    arrays["master_head.w1"] = (0.01 * arrays["master_head.w1"]).astype(np.float32)
    arrays["track_head.b1"] = _logit(neutral_strip_theta()).astype(np.float32)
    arrays["master_head.b1"] = _logit(neutral_master_theta()).astype(np.float32)
    return ControllerWeights(arrays)


# ---------------------------------------------------------------------------
# forward pass (shared by inference and training)


def _layer_norm(x: torch.Tensor, g: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + 1e-6) * g + b


def _mlp(x, w0, b0, w1, b1) -> torch.Tensor:
    return torch.relu(x @ w0 + b0) @ w1 + b1


def _attention(h: torch.Tensor, w: dict[str, torch.Tensor], prefix: str) -> torch.Tensor:
    s = h.shape[0]
    q = (h @ w[f"{prefix}.wq"] + w[f"{prefix}.bq"]).reshape(s, N_HEADS, HEAD_DIM)
    k = (h @ w[f"{prefix}.wk"] + w[f"{prefix}.bk"]).reshape(s, N_HEADS, HEAD_DIM)
    v = (h @ w[f"{prefix}.wv"] + w[f"{prefix}.bv"]).reshape(s, N_HEADS, HEAD_DIM)
    scores = torch.einsum("qhd,khd->hqk", q, k) / np.sqrt(HEAD_DIM)
    attn = torch.softmax(scores, dim=-1)
    ctx = torch.einsum("hqk,khd->qhd", attn, v).reshape(s, MODEL_DIM)
    return ctx @ w[f"{prefix}.wo"] + w[f"{prefix}.bo"]


def _encoder(seq: torch.Tensor, w: dict[str, torch.Tensor]) -> torch.Tensor:
    h = seq
    for layer in range(N_LAYERS):
        p = f"enc{layer}"
        h = h + _attention(_layer_norm(h, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"]), w, p)
        f = _layer_norm(h, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"])
        h = h + _mlp(f, w[f"{p}.ff.w0"], w[f"{p}.ff.b0"], w[f"{p}.ff.w1"], w[f"{p}.ff.b1"])
    return _layer_norm(h, w["final_ln.g"], w["final_ln.b"])


def _normalize_descriptors(frames: torch.Tensor) -> torch.Tensor:
    """Map the 24 per-frame descriptors onto comparable O(1) scales.

    Columns: rms_db L/R/mid, crest_db L/R, width, centroid L/R, 16 band
    fractions.  dB values span [-120, 0], centroids reach fs/2 and the
    width ratio is unbounded for anti-correlated channels, so without
    this the embedding MLP sees inputs differing by five orders of
    magnitude.
    """
    out = frames.clone()
    out[:, 0:3] = (frames[:, 0:3] + 60.0) / 60.0
    out[:, 3:5] = frames[:, 3:5] / 20.0
    out[:, 5] = frames[:, 5] / (1.0 + frames[:, 5])
    out[:, 6:8] = frames[:, 6:8] / 10000.0
    return out


def _pooled_descriptor(x: torch.Tensor, fs: float, frame_s: float) -> torch.Tensor:
    """Mean+std frame pooling of the normalized style descriptors; (48,) tensor."""
    frames = _normalize_descriptors(feat.frame_feature_tensor(x, fs, frame_s))
    mean = frames.mean(dim=0)
    std = torch.sqrt(frames.var(dim=0, unbiased=False) + 1e-12)
    return torch.cat([mean, std])


def _embed_sequence(
    track_ts: list[torch.Tensor],
    reference_t: torch.Tensor,
    w: dict[str, torch.Tensor],
    fs: float,
    frame_s: float,
) -> torch.Tensor:
    """Embedding sequence [reference, track_1 .. track_N]; (N+1, 64)."""
    descs = [_pooled_descriptor(reference_t, fs, frame_s)]
    for t in track_ts:
        dual = torch.stack([t, t])  # mono tracks enter the extractor dual-mono
        descs.append(_pooled_descriptor(dual, fs, frame_s))
    x = torch.stack(descs)  # (N+1, 48)
    h = _mlp(x, w["embed.w0"], w["embed.b0"], w["embed.w1"], w["embed.b1"])
    kinds = torch.zeros(len(descs), dtype=torch.long)
    kinds[1:] = 1
    return h + w["type_emb"][kinds]


def predict_theta_tensor(
    track_ts: list[torch.Tensor],
    reference_t: torch.Tensor,
    w: dict[str, torch.Tensor],
    fs: float,
    frame_s: float = 0.25,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable prediction; returns (theta tensor, embeddings)."""
    if len(track_ts) == 0:
        raise ValidationError("prediction needs at least one track")
    if len(track_ts) > MAX_TRACKS:
        raise CapacityError(
            f"{len(track_ts)} tracks exceeds the {MAX_TRACKS}-track limit"
        )
    emb = _embed_sequence(track_ts, reference_t, w, fs, frame_s)
    ctx = _encoder(emb, w)
    track_blocks = torch.sigmoid(
        _mlp(ctx[1:], w["track_head.w0"], w["track_head.b0"],
             w["track_head.w1"], w["track_head.b1"])
    )  # (N, 20)
    pooled = ctx.mean(dim=0)
    master_block = torch.sigmoid(
        _mlp(pooled, w["master_head.w0"], w["master_head.b0"],
             w["master_head.w1"], w["master_head.b1"])
    )  # (19,)
    theta = torch.cat([track_blocks.reshape(-1), master_block])
    return theta, emb


# ---------------------------------------------------------------------------
# public inference API


@dataclass
class PredictOutput:
    theta: np.ndarray
    embeddings: np.ndarray  # (N+1, 64), reference first
    loss: float | None = None


def encode_tracks(
    tracks: list[AudioBuffer],
    reference: AudioBuffer,
    weights: ControllerWeights,
    frame_s: float = 0.25,
) -> np.ndarray:
    """Embedding sequence [reference, tracks...] as a (N+1, 64) array."""
    if len(tracks) > MAX_TRACKS:
        raise CapacityError(f"{len(tracks)} tracks exceeds the {MAX_TRACKS}-track limit")
    track_ts = [as_audio_tensor(t.samples)[0] for t in tracks]
    ref_t = as_audio_tensor(reference.to_stereo().samples)
    fs = reference.sample_rate
    with torch.no_grad():
        emb = _embed_sequence(track_ts, ref_t, weights.tensors(), fs, frame_s)
    return emb.numpy()


def predict_params(
    tracks: list[AudioBuffer],
    reference: AudioBuffer,
    weights: ControllerWeights,
    loss_config: LossConfig | None = None,
    compute_loss: bool = True,
) -> PredictOutput:
    """Predict normalized console parameters for the tracks given the reference."""
    config = loss_config or LossConfig()
    track_ts = [as_audio_tensor(t.samples)[0] for t in tracks]
    fs = tracks[0].sample_rate if tracks else reference.sample_rate
    ref_t = as_audio_tensor(reference.to_stereo().samples)
    with torch.no_grad():
        theta_t, emb = predict_theta_tensor(
            track_ts, ref_t, weights.tensors(), fs, config.frame_s
        )
        loss = None
        if compute_loss:
            phys = denormalize_tensor(theta_t, len(track_ts))
            mix = render_mix_tensor(track_ts, phys, fs)
            ref_fams = reference_families(ref_t, fs, config)
            loss = float(style_loss_tensor(mix, ref_fams, fs, config))
    return PredictOutput(theta=theta_t.numpy(), embeddings=emb.numpy(), loss=loss)


# ---------------------------------------------------------------------------
# weight serialization


def save_weights(weights: ControllerWeights, path) -> None:
    """Write MSTW v1: magic, version u32, then (name, rank, dims, f32 data) records."""
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", weights.version))
        for name in sorted(weights.arrays):
            arr = np.ascontiguousarray(weights.arrays[name], dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_weights(path) -> ControllerWeights:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated weights file")
        out = blob[off : off + n]
        off += n
        return out

    if take(4) != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: not a MSTW weights file")
    (version,) = struct.unpack("<I", take(4))
    if version != WEIGHTS_VERSION:
        raise FormatError(
            f"{path}: weights version {version}, expected {WEIGHTS_VERSION}"
        )
    arrays: dict[str, np.ndarray] = {}
    while off < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims)
        arrays[name] = data.copy()
    return ControllerWeights(arrays, version=version)
