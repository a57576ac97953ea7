"""Project model: tracks, reference selection, analysis segments.

A session mirrors a small DAW project.  Muted tracks are excluded from
the model inputs but are selectable as the style reference; at most 20
tracks may be active at once.  Sessions serialize to a JSON document
whose track paths are relative to the session file.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import (
    ENGINE_RATE,
    AudioBuffer,
    Segment,
    extract_segment,
    load_wav,
    pad_to_length,
    resample,
    segment_length,
    write_wav,
)
from .errors import (
    CapacityError,
    EmptySessionError,
    NotFoundError,
    ValidationError,
)
from .params import ConsoleParams, params_from_dict, params_to_dict

MAX_ACTIVE_TRACKS = 20

REFERENCE_KINDS = ("muted_track", "external_file", "preset")


@dataclass
class Track:
    id: str
    name: str
    audio: AudioBuffer  # mono, at the session rate after ingestion
    muted: bool = False
    source_path: str | None = None

    def __post_init__(self) -> None:
        if self.audio.channels != 1:
            raise ValidationError(f"track {self.id!r} must hold mono audio")


@dataclass
class ReferenceSource:
    kind: str
    locator: str  # track id / file path / preset name
    segment: Segment

    def __post_init__(self) -> None:
        if self.kind not in REFERENCE_KINDS:
            raise ValidationError(f"unknown reference kind {self.kind!r}")


@dataclass
class Session:
    id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    tracks: list[Track] = field(default_factory=list)
    reference: ReferenceSource | None = None
    input_segment: Segment | None = None
    params: ConsoleParams | None = None
    sample_rate: int = ENGINE_RATE

    def active_tracks(self) -> list[Track]:
        return [t for t in self.tracks if not t.muted]

    def track_by_id(self, track_id: str) -> Track:
        for t in self.tracks:
            if t.id == track_id:
                return t
        raise NotFoundError(f"no track with id {track_id!r}")

    def validate(self) -> None:
        if len(self.active_tracks()) > MAX_ACTIVE_TRACKS:
            raise CapacityError(
                f"{len(self.active_tracks())} active tracks exceeds the "
                f"{MAX_ACTIVE_TRACKS}-track limit"
            )


def ingest_audio(path, stereo_mode: str = "downmix") -> list[AudioBuffer]:
    """Load a WAV as engine-rate mono buffers.

    Stereo files become one (L+R)/2 downmix, or two mono buffers with
    stereo_mode="split".
    """
    buf = resample(load_wav(path), ENGINE_RATE)
    if buf.channels == 1:
        return [buf]
    if stereo_mode == "downmix":
        return [buf.mono()]
    if stereo_mode == "split":
        return [
            AudioBuffer(buf.samples[0:1].copy(), buf.sample_rate),
            AudioBuffer(buf.samples[1:2].copy(), buf.sample_rate),
        ]
    raise ValidationError(f"unknown stereo_mode {stereo_mode!r}")


def model_inputs(session: Session) -> list[tuple[Track, AudioBuffer]]:
    """Active tracks in session order, cropped to the input segment.

    Tracks shorter than the segment are zero-padded to the segment
    length so every model input has the same sample count.
    """
    if session.input_segment is None:
        raise ValidationError("session has no input segment; pick a project section first")
    active = session.active_tracks()
    if not active:
        raise EmptySessionError("all tracks are muted; nothing to mix")
    if len(active) > MAX_ACTIVE_TRACKS:
        raise CapacityError(
            f"{len(active)} active tracks exceeds the {MAX_ACTIVE_TRACKS}-track limit"
        )
    seg = session.input_segment
    target_len = segment_length(seg, session.sample_rate)
    out = []
    for track in active:
        audio = resample(track.audio, session.sample_rate)
        cropped = extract_segment(audio, seg)
        out.append((track, pad_to_length(cropped, target_len)))
    return out


ASSIST_WINDOW_S = 10.0


def assist_inputs(
    session: Session, preset_dir, window_s: float = ASSIST_WINDOW_S
) -> tuple[list[AudioBuffer], AudioBuffer]:
    """Model input buffers and reference audio for one assistant run.

    Both the input section and the reference segment are capped at
    window_s seconds (taken from their starts) so assist cost stays
    bounded when the user drags a long region.
    """
    inputs = model_inputs(session)
    buffers = [buf for _, buf in inputs]
    reference = resolve_reference(session, preset_dir)
    cap = int(round(window_s * session.sample_rate))
    if buffers and buffers[0].n_samples > cap:
        buffers = [AudioBuffer(b.samples[:, :cap], b.sample_rate) for b in buffers]
    if reference.n_samples > cap:
        reference = AudioBuffer(reference.samples[:, :cap], reference.sample_rate)
    return buffers, reference


def preset_names(preset_dir) -> list[str]:
    d = Path(preset_dir)
    if not d.is_dir():
        return []
    return sorted(p.stem for p in d.glob("*.wav"))


def resolve_reference(session: Session, preset_dir) -> AudioBuffer:
    """Reference audio cropped to its segment, at the session rate, stereo."""
    ref = session.reference
    if ref is None:
        raise ValidationError("session has no reference selected")
    if ref.kind == "muted_track":
        track = session.track_by_id(ref.locator)
        if not track.muted:
            raise ValidationError(
                f"reference track {track.id!r} must be muted to serve as reference"
            )
        audio = track.audio
    elif ref.kind == "external_file":
        audio = load_wav(ref.locator)
    elif ref.kind == "preset":
        path = Path(preset_dir) / f"{ref.locator}.wav"
        if not path.exists():
            raise NotFoundError(f"no preset named {ref.locator!r}")
        audio = load_wav(path)
    else:  # unreachable after ReferenceSource validation
        raise ValidationError(f"unknown reference kind {ref.kind!r}")
    cropped = extract_segment(audio, ref.segment)
    return resample(cropped, session.sample_rate).to_stereo()


# ---------------------------------------------------------------------------
# session file I/O


def _segment_to_dict(seg: Segment | None):
    if seg is None:
        return None
    return {"start_s": seg.start_s, "end_s": seg.end_s}


def _segment_from_dict(doc) -> Segment | None:
    if doc is None:
        return None
    return Segment(float(doc["start_s"]), float(doc["end_s"]))


def session_to_dict(session: Session) -> dict:
    return {
        "id": session.id,
        "sample_rate": session.sample_rate,
        "tracks": [
            {"id": t.id, "name": t.name, "path": t.source_path, "muted": t.muted}
            for t in session.tracks
        ],
        "reference": (
            None
            if session.reference is None
            else {
                "kind": session.reference.kind,
                "locator": session.reference.locator,
                "segment": _segment_to_dict(session.reference.segment),
            }
        ),
        "input_segment": _segment_to_dict(session.input_segment),
        "params": None if session.params is None else params_to_dict(session.params),
    }


def save_session(session: Session, path) -> None:
    """Write the session JSON; tracks without a source file get one next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    audio_dir = path.parent / f"{path.stem}_audio"
    for track in session.tracks:
        if track.source_path is None:
            audio_dir.mkdir(parents=True, exist_ok=True)
            wav_path = audio_dir / f"{track.id}.wav"
            write_wav(track.audio, wav_path)
            track.source_path = str(wav_path.relative_to(path.parent))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(session_to_dict(session), fh, indent=2)
        fh.write("\n")


def load_session(path, stereo_mode: str = "downmix") -> Session:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    base = path.parent
    tracks = []
    for tdoc in doc.get("tracks", []):
        wav_path = Path(tdoc["path"])
        if not wav_path.is_absolute():
            wav_path = base / wav_path
        buf = resample(load_wav(wav_path), int(doc.get("sample_rate", ENGINE_RATE)))
        if buf.channels == 2:
            buf = buf.mono() if stereo_mode == "downmix" else buf
        tracks.append(
            Track(
                id=str(tdoc["id"]),
                name=str(tdoc.get("name", tdoc["id"])),
                audio=buf.mono(),
                muted=bool(tdoc.get("muted", False)),
                source_path=str(tdoc["path"]),
            )
        )
    ref = None
    rdoc = doc.get("reference")
    if rdoc is not None:
        locator = str(rdoc["locator"])
        if rdoc["kind"] == "external_file":
            loc_path = Path(locator)
            if not loc_path.is_absolute():
                locator = str(base / loc_path)
        ref = ReferenceSource(
            kind=str(rdoc["kind"]),
            locator=locator,
            segment=_segment_from_dict(rdoc["segment"]),
        )
    params_doc = doc.get("params")
    return Session(
        id=str(doc["id"]),
        tracks=tracks,
        reference=ref,
        input_segment=_segment_from_dict(doc.get("input_segment")),
        params=None if params_doc is None else params_from_dict(params_doc),
        sample_rate=int(doc.get("sample_rate", ENGINE_RATE)),
    )
