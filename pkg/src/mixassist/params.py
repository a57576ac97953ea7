"""Console parameter model: physical dataclasses and the normalized vector mapping.

Every console control lives in a fixed slot of a normalized vector
``theta`` with entries in [0, 1].  Per-strip layout is 20 slots
(gain, pan, 4 EQ bands x (freq, gain, q), 6 compressor fields); the
master bus takes the final 19 slots (4 EQ bands, compressor, fader).
Linear-scaled fields map ``min + theta * (max - min)``; log-scaled
fields map ``min * (max / min) ** theta``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import torch

from .errors import ShapeError, ValidationError

STRIP_SIZE = 20
MASTER_SIZE = 19

EQ_BAND_TYPES = ("low_shelf", "peak", "peak", "high_shelf")
EQ_FREQ_RANGES = ((20.0, 500.0), (200.0, 5000.0), (600.0, 12000.0), (1500.0, 16000.0))
EQ_GAIN_RANGE = (-18.0, 18.0)
EQ_Q_RANGE = (0.3, 4.0)


@dataclass(frozen=True)
class ParamSpec:
    """Range and scaling of one physical control."""

    name: str
    unit: str
    min: float
    max: float
    scale: str  # "linear" or "log"

    def __post_init__(self) -> None:
        if not self.min < self.max:
            raise ValidationError(f"{self.name}: min must be < max")
        if self.scale == "log" and self.min <= 0:
            raise ValidationError(f"{self.name}: log scale requires min > 0")
        if self.scale not in ("linear", "log"):
            raise ValidationError(f"{self.name}: unknown scale {self.scale!r}")

    def denorm(self, t: float) -> float:
        if self.scale == "log":
            return float(self.min * (self.max / self.min) ** t)
        return float(self.min + t * (self.max - self.min))

    def norm(self, v: float) -> float:
        if self.scale == "log":
            return float(np.log(v / self.min) / np.log(self.max / self.min))
        return float((v - self.min) / (self.max - self.min))

    def contains(self, v: float) -> bool:
        # small epsilon absorbs float round-trip noise at the endpoints
        tol = 1e-9 * max(1.0, abs(self.min), abs(self.max))
        return self.min - tol <= v <= self.max + tol


def _eq_specs(prefix: str) -> list[ParamSpec]:
    specs: list[ParamSpec] = []
    for i, (lo, hi) in enumerate(EQ_FREQ_RANGES):
        specs.append(ParamSpec(f"{prefix}.eq{i}.freq_hz", "Hz", lo, hi, "log"))
        specs.append(ParamSpec(f"{prefix}.eq{i}.gain_db", "dB", *EQ_GAIN_RANGE, "linear"))
        specs.append(ParamSpec(f"{prefix}.eq{i}.q", "", *EQ_Q_RANGE, "log"))
    return specs


def _comp_specs(prefix: str) -> list[ParamSpec]:
    return [
        ParamSpec(f"{prefix}.comp.threshold_db", "dB", -60.0, 0.0, "linear"),
        ParamSpec(f"{prefix}.comp.ratio", "", 1.0, 20.0, "log"),
        ParamSpec(f"{prefix}.comp.attack_ms", "ms", 1.0, 100.0, "log"),
        ParamSpec(f"{prefix}.comp.release_ms", "ms", 10.0, 1000.0, "log"),
        ParamSpec(f"{prefix}.comp.knee_db", "dB", 0.0, 12.0, "linear"),
        ParamSpec(f"{prefix}.comp.makeup_db", "dB", 0.0, 24.0, "linear"),
    ]


STRIP_SPECS: list[ParamSpec] = (
    [
        ParamSpec("strip.gain_db", "dB", -48.0, 12.0, "linear"),
        ParamSpec("strip.pan", "", 0.0, 1.0, "linear"),
    ]
    + _eq_specs("strip")
    + _comp_specs("strip")
)

MASTER_SPECS: list[ParamSpec] = (
    _eq_specs("master")
    + _comp_specs("master")
    + [ParamSpec("master.fader_db", "dB", -48.0, 12.0, "linear")]
)

assert len(STRIP_SPECS) == STRIP_SIZE
assert len(MASTER_SPECS) == MASTER_SIZE


def theta_dim(n_tracks: int) -> int:
    return STRIP_SIZE * n_tracks + MASTER_SIZE


def specs_for(n_tracks: int) -> list[ParamSpec]:
    return STRIP_SPECS * n_tracks + MASTER_SPECS


@lru_cache(maxsize=32)
def _spec_tensors(n_tracks: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    specs = specs_for(n_tracks)
    lo = np.array([s.min for s in specs], dtype=np.float64)
    hi = np.array([s.max for s in specs], dtype=np.float64)
    is_log = np.array([s.scale == "log" for s in specs], dtype=bool)
    log_ratio = np.where(
        is_log, np.log(np.where(is_log, hi, 1.0) / np.where(is_log, lo, 1.0)), 0.0
    )
    return (
        torch.from_numpy(lo),
        torch.from_numpy(hi),
        torch.from_numpy(is_log),
        torch.from_numpy(log_ratio),
    )


def denormalize_tensor(theta: torch.Tensor, n_tracks: int) -> torch.Tensor:
    """Map normalized theta (torch, any grad state) to physical values.

    This is the single source of truth for denormalization; the float
    API below routes through it so both paths produce bit-identical
    physical values.
    """
    if theta.ndim != 1 or theta.shape[0] != theta_dim(n_tracks):
        raise ShapeError(
            f"theta length {tuple(theta.shape)} != {theta_dim(n_tracks)} for {n_tracks} tracks"
        )
    lo_t, hi_t, mask, log_ratio_t = _spec_tensors(n_tracks)
    lin = lo_t + theta * (hi_t - lo_t)
    lg = lo_t * torch.exp(theta * log_ratio_t)
    return torch.where(mask, lg, lin)


# ---------------------------------------------------------------------------
# physical dataclasses


@dataclass
class EqBand:
    band_type: str
    freq_hz: float
    gain_db: float
    q: float


@dataclass
class CompressorParams:
    threshold_db: float
    ratio: float
    attack_ms: float
    release_ms: float
    knee_db: float
    makeup_db: float


@dataclass
class ChannelStripParams:
    gain_db: float
    pan: float
    eq: list[EqBand]
    comp: CompressorParams


@dataclass
class MasterBusParams:
    eq: list[EqBand]
    comp: CompressorParams
    fader_db: float


@dataclass
class ConsoleParams:
    strips: list[ChannelStripParams]
    master: MasterBusParams

    @property
    def n_tracks(self) -> int:
        return len(self.strips)

    def theta(self) -> np.ndarray:
        return normalize(self)

    def validate(self) -> None:
        vec = _physical_vector(self)
        for spec, v in zip(specs_for(self.n_tracks), vec):
            if not np.isfinite(v) or not spec.contains(float(v)):
                raise ValidationError(
                    f"{spec.name}={v} outside [{spec.min}, {spec.max}]"
                )
        for strip in self.strips:
            _check_band_types(strip.eq)
        _check_band_types(self.master.eq)


def _check_band_types(bands: Sequence[EqBand]) -> None:
    if len(bands) != 4:
        raise ValidationError(f"expected 4 EQ bands, got {len(bands)}")
    for band, expected in zip(bands, EQ_BAND_TYPES):
        if band.band_type != expected:
            raise ValidationError(
                f"EQ band type {band.band_type!r} in a {expected!r} slot"
            )


def _eq_from_values(vals: Sequence[float]) -> list[EqBand]:
    return [
        EqBand(EQ_BAND_TYPES[i], float(vals[3 * i]), float(vals[3 * i + 1]), float(vals[3 * i + 2]))
        for i in range(4)
    ]


def _comp_from_values(vals: Sequence[float]) -> CompressorParams:
    return CompressorParams(*(float(v) for v in vals))


def _eq_values(bands: Sequence[EqBand]) -> list[float]:
    out: list[float] = []
    for b in bands:
        out += [b.freq_hz, b.gain_db, b.q]
    return out


def _comp_values(c: CompressorParams) -> list[float]:
    return [c.threshold_db, c.ratio, c.attack_ms, c.release_ms, c.knee_db, c.makeup_db]


def _physical_vector(params: ConsoleParams) -> np.ndarray:
    vec: list[float] = []
    for strip in params.strips:
        vec += [strip.gain_db, strip.pan]
        vec += _eq_values(strip.eq)
        vec += _comp_values(strip.comp)
    vec += _eq_values(params.master.eq)
    vec += _comp_values(params.master.comp)
    vec.append(params.master.fader_db)
    return np.array(vec, dtype=np.float64)


def _params_from_vector(vec: np.ndarray, n_tracks: int) -> ConsoleParams:
    strips = []
    for i in range(n_tracks):
        s = vec[i * STRIP_SIZE : (i + 1) * STRIP_SIZE]
        strips.append(
            ChannelStripParams(
                gain_db=float(s[0]),
                pan=float(s[1]),
                eq=_eq_from_values(s[2:14]),
                comp=_comp_from_values(s[14:20]),
            )
        )
    m = vec[n_tracks * STRIP_SIZE :]
    master = MasterBusParams(
        eq=_eq_from_values(m[0:12]),
        comp=_comp_from_values(m[12:18]),
        fader_db=float(m[18]),
    )
    return ConsoleParams(strips=strips, master=master)


def denormalize(theta: np.ndarray | Sequence[float], n_tracks: int) -> ConsoleParams:
    """Normalized vector -> physical ConsoleParams."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.shape[0] != theta_dim(n_tracks):
        raise ShapeError(
            f"theta length {theta.shape} != {theta_dim(n_tracks)} for {n_tracks} tracks"
        )
    if np.any(theta < -1e-9) or np.any(theta > 1 + 1e-9):
        raise ValidationError("theta entries must lie in [0, 1]")
    phys = denormalize_tensor(torch.from_numpy(theta), n_tracks).numpy()
    return _params_from_vector(phys, n_tracks)


def normalize(params: ConsoleParams) -> np.ndarray:
    """Physical ConsoleParams -> normalized vector (inverse of denormalize)."""
    vec = _physical_vector(params)
    specs = specs_for(params.n_tracks)
    return np.array([spec.norm(float(v)) for spec, v in zip(specs, vec)], dtype=np.float64)


def neutral_strip_theta() -> np.ndarray:
    """Normalized slots for a passthrough strip: 0 dB gain, center pan, flat EQ, ratio 1."""
    t = np.empty(STRIP_SIZE, dtype=np.float64)
    t[0] = STRIP_SPECS[0].norm(0.0)  # gain 0 dB
    t[1] = 0.5  # pan center
    for i in range(4):
        t[2 + 3 * i] = 0.5  # freq at log midpoint
        t[3 + 3 * i] = 0.5  # gain 0 dB
        t[4 + 3 * i] = 0.5  # q at log midpoint
    t[14] = 0.5  # threshold -30 dB (inert at ratio 1)
    t[15] = 0.0  # ratio 1
    t[16] = 0.5
    t[17] = 0.5
    t[18] = 0.0  # knee 0
    t[19] = 0.0  # makeup 0
    return t


def neutral_master_theta() -> np.ndarray:
    t = np.empty(MASTER_SIZE, dtype=np.float64)
    for i in range(4):
        t[3 * i] = 0.5
        t[1 + 3 * i] = 0.5
        t[2 + 3 * i] = 0.5
    t[12] = 0.5
    t[13] = 0.0
    t[14] = 0.5
    t[15] = 0.5
    t[16] = 0.0
    t[17] = 0.0
    t[18] = MASTER_SPECS[18].norm(0.0)  # fader 0 dB
    return t


def neutral_theta(n_tracks: int) -> np.ndarray:
    return np.concatenate([np.tile(neutral_strip_theta(), n_tracks), neutral_master_theta()])


def neutral_params(n_tracks: int) -> ConsoleParams:
    return denormalize(neutral_theta(n_tracks), n_tracks)


# ---------------------------------------------------------------------------
# JSON wire format: physical units, optional "theta"; physical wins on conflict


def _band_to_json(b: EqBand) -> dict:
    return {"type": b.band_type, "freq_hz": b.freq_hz, "gain_db": b.gain_db, "q": b.q}


def _comp_to_json(c: CompressorParams) -> dict:
    return {
        "threshold_db": c.threshold_db,
        "ratio": c.ratio,
        "attack_ms": c.attack_ms,
        "release_ms": c.release_ms,
        "knee_db": c.knee_db,
        "makeup_db": c.makeup_db,
    }


def params_to_dict(params: ConsoleParams, include_theta: bool = True) -> dict:
    doc = {
        "strips": [
            {
                "gain_db": s.gain_db,
                "pan": s.pan,
                "eq": [_band_to_json(b) for b in s.eq],
                "comp": _comp_to_json(s.comp),
            }
            for s in params.strips
        ],
        "master": {
            "eq": [_band_to_json(b) for b in params.master.eq],
            "comp": _comp_to_json(params.master.comp),
            "fader_db": params.master.fader_db,
        },
    }
    if include_theta:
        doc["theta"] = [float(t) for t in normalize(params)]
    return doc


def _band_from_json(doc: dict, slot: int) -> EqBand:
    return EqBand(
        band_type=doc.get("type", EQ_BAND_TYPES[slot]),
        freq_hz=float(doc["freq_hz"]),
        gain_db=float(doc["gain_db"]),
        q=float(doc["q"]),
    )


def _comp_from_json(doc: dict) -> CompressorParams:
    return CompressorParams(
        threshold_db=float(doc["threshold_db"]),
        ratio=float(doc["ratio"]),
        attack_ms=float(doc["attack_ms"]),
        release_ms=float(doc["release_ms"]),
        knee_db=float(doc["knee_db"]),
        makeup_db=float(doc["makeup_db"]),
    )


def params_from_dict(doc: dict) -> ConsoleParams:
    if "strips" in doc and "master" in doc:
        try:
            strips = [
                ChannelStripParams(
                    gain_db=float(s["gain_db"]),
                    pan=float(s["pan"]),
                    eq=[_band_from_json(b, i) for i, b in enumerate(s["eq"])],
                    comp=_comp_from_json(s["comp"]),
                )
                for s in doc["strips"]
            ]
            master_doc = doc["master"]
            master = MasterBusParams(
                eq=[_band_from_json(b, i) for i, b in enumerate(master_doc["eq"])],
                comp=_comp_from_json(master_doc["comp"]),
                fader_db=float(master_doc["fader_db"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed params document: {exc}") from exc
        params = ConsoleParams(strips=strips, master=master)
    elif "theta" in doc:
        theta = np.asarray(doc["theta"], dtype=np.float64)
        n_tracks, rem = divmod(theta.shape[0] - MASTER_SIZE, STRIP_SIZE)
        if rem != 0 or n_tracks < 0:
            raise ShapeError(f"theta length {theta.shape[0]} is not 20*N+19")
        params = denormalize(theta, n_tracks)
    else:
        raise ValidationError("params document needs strips+master or theta")
    params.validate()
    return params


def save_params(params: ConsoleParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params), fh, indent=2)
        fh.write("\n")


def load_params(path) -> ConsoleParams:
    with open(path, "r", encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))
