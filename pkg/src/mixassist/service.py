"""HTTP service for the assistant workflow.

Sessions persist as JSON under a root directory with uploaded audio in
a content-addressed WAV store; renders are content-addressed too, so
identical sessions produce byte-identical mix resources.  Assist runs
as a cancellable background job with monotone progress.  Mutations to
one session are serialized and optionally guarded by an optimistic
version check (409 on mismatch).
"""

from __future__ import annotations

import hashlib
import io
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Form, HTTPException, Request, Response, UploadFile
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from . import __version__
from .audio import AudioBuffer, Segment, extract_segment, load_wav, write_wav, wav_bytes
from .console import render_mix
from .controller import ControllerWeights, init_weights, predict_params
from .errors import (
    CapacityError,
    MixAssistError,
    NotFoundError,
    ValidationError,
)
from .features import LossConfig
from .optimize import OptimizeConfig, optimize_params
from .params import (
    ConsoleParams,
    MASTER_SPECS,
    STRIP_SPECS,
    denormalize,
    neutral_params,
    params_from_dict,
    params_to_dict,
)
from .session import (
    MAX_ACTIVE_TRACKS,
    ReferenceSource,
    Session,
    Track,
    assist_inputs,
    model_inputs,
    preset_names,
    resolve_reference,
    session_to_dict,
)


# ---------------------------------------------------------------------------
# request bodies


class CreateSessionBody(BaseModel):
    id: Optional[str] = None
    sample_rate: int = 44100


class TrackPatchBody(BaseModel):
    muted: Optional[bool] = None
    name: Optional[str] = None
    version: Optional[int] = None


class SegmentBody(BaseModel):
    start_s: float
    end_s: float
    version: Optional[int] = None


class ReferenceBody(BaseModel):
    kind: str
    locator: str
    segment: SegmentBody
    version: Optional[int] = None


class AssistBody(BaseModel):
    mode: str = "optimize"
    steps: int = 500
    seed: int = 0
    version: Optional[int] = None


class ParamsBody(BaseModel):
    strips: Optional[list] = None
    master: Optional[dict] = None
    theta: Optional[list] = None
    version: Optional[int] = None


# ---------------------------------------------------------------------------
# stores


@dataclass
class SessionEntry:
    session: Session
    version: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class Job:
    id: str
    session_id: str
    mode: str
    state: str = "queued"  # queued -> running -> done | failed | cancelled
    progress: float = 0.0
    theta: Optional[np.ndarray] = None
    loss_trace: Optional[list[float]] = None
    error: Optional[str] = None
    cancel_event: threading.Event = field(default_factory=threading.Event)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def to_dict(self) -> dict:
        with self.lock:
            doc = {
                "id": self.id,
                "session_id": self.session_id,
                "mode": self.mode,
                "state": self.state,
                "progress": self.progress,
                "error": self.error,
            }
            if self.theta is not None:
                doc["result"] = {
                    "theta": self.theta.tolist(),
                    "loss_trace": self.loss_trace or [],
                }
            return doc

    def bump_progress(self, value: float) -> None:
        with self.lock:
            self.progress = max(self.progress, min(1.0, value))


class ServiceState:
    def __init__(self, root: Path, weights: ControllerWeights | None = None):
        self.root = Path(root)
        self.audio_dir = self.root / "audio"
        self.render_dir = self.root / "renders"
        self.session_dir = self.root / "sessions"
        self.preset_dir = self.root / "presets"
        for d in (self.audio_dir, self.render_dir, self.session_dir, self.preset_dir):
            d.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, SessionEntry] = {}
        self.jobs: dict[str, Job] = {}
        self.resources: dict[str, Path] = {}
        self.weights = weights
        self.executor = ThreadPoolExecutor(max_workers=2)
        self._index_existing()

    def _index_existing(self) -> None:
        for wav in self.audio_dir.glob("*.wav"):
            self.resources[wav.stem] = wav
        for wav in self.render_dir.glob("*.wav"):
            self.resources[wav.stem] = wav

    # -- sessions

    def create_session(self, body: CreateSessionBody) -> SessionEntry:
        session = Session(
            id=body.id or uuid.uuid4().hex[:12], sample_rate=body.sample_rate
        )
        entry = SessionEntry(session=session)
        self.sessions[session.id] = entry
        self.persist(entry)
        return entry

    def entry(self, session_id: str) -> SessionEntry:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise NotFoundError(f"no session {session_id!r}") from None

    def persist(self, entry: SessionEntry) -> None:
        doc = session_to_dict(entry.session)
        doc["version"] = entry.version
        path = self.session_dir / f"{entry.session.id}.json"
        import json

        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    # -- audio store

    def store_upload(self, data: bytes) -> tuple[str, Path]:
        digest = hashlib.sha256(data).hexdigest()[:16]
        rid = f"aud_{digest}"
        path = self.audio_dir / f"{rid}.wav"
        if not path.exists():
            path.write_bytes(data)
        self.resources[rid] = path
        return rid, path

    def store_render(self, buffer: AudioBuffer) -> str:
        data = wav_bytes(buffer)
        digest = hashlib.sha256(data).hexdigest()[:16]
        rid = f"ren_{digest}"
        path = self.render_dir / f"{rid}.wav"
        if not path.exists():
            path.write_bytes(data)
        self.resources[rid] = path
        return rid

    def resource_path(self, rid: str) -> Path:
        try:
            return self.resources[rid]
        except KeyError:
            raise NotFoundError(f"no audio resource {rid!r}") from None


def _check_version(entry: SessionEntry, requested: Optional[int]) -> None:
    if requested is not None and requested != entry.version:
        raise HTTPException(
            status_code=409,
            detail=f"version conflict: session at {entry.version}, request at {requested}",
        )


def _session_doc(entry: SessionEntry) -> dict:
    doc = session_to_dict(entry.session)
    doc["version"] = entry.version
    for tdoc, track in zip(doc["tracks"], entry.session.tracks):
        tdoc["duration_s"] = track.audio.duration_s
        tdoc["resource"] = Path(track.source_path).stem if track.source_path else None
    return doc


def _spec_doc(spec) -> dict:
    return {
        "name": spec.name,
        "unit": spec.unit,
        "min": spec.min,
        "max": spec.max,
        "scale": spec.scale,
    }


def create_app(root, weights: ControllerWeights | None = None) -> FastAPI:
    state = ServiceState(Path(root), weights)
    app = FastAPI(title="mixassist", version=__version__)
    app.state.service = state

    @app.exception_handler(MixAssistError)
    async def _mixassist_error(request: Request, exc: MixAssistError):
        status = 404 if isinstance(exc, NotFoundError) else 400
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    # -- sessions

    @app.post("/api/sessions")
    def create_session(body: CreateSessionBody):
        entry = state.create_session(body)
        return _session_doc(entry)

    @app.get("/api/sessions/{sid}")
    def get_session(sid: str):
        return _session_doc(state.entry(sid))

    @app.post("/api/sessions/{sid}/tracks")
    async def upload_track(
        sid: str,
        file: UploadFile,
        name: str = Form(None),
        muted: bool = Form(False),
        stereo_mode: str = Form("downmix"),
        version: int = Form(None),
    ):
        entry = state.entry(sid)
        data = await file.read()
        with entry.lock:
            _check_version(entry, version)
            session = entry.session
            rid, path = state.store_upload(data)
            from .session import ingest_audio

            buffers = ingest_audio(path, stereo_mode)
            if not muted:
                active = len(session.active_tracks()) + len(buffers)
                if active > MAX_ACTIVE_TRACKS:
                    raise CapacityError(
                        f"upload would make {active} active tracks; the limit is "
                        f"{MAX_ACTIVE_TRACKS}"
                    )
            base = name or (Path(file.filename).stem if file.filename else rid)
            created = []
            for i, buf in enumerate(buffers):
                suffix = "" if len(buffers) == 1 else (".L", ".R")[i]
                track = Track(
                    id=uuid.uuid4().hex[:12],
                    name=f"{base}{suffix}",
                    audio=buf,
                    muted=muted,
                    source_path=str(path),
                )
                session.tracks.append(track)
                created.append(track.id)
            entry.version += 1
            state.persist(entry)
            return {"track_ids": created, "version": entry.version}

    @app.patch("/api/sessions/{sid}/tracks/{tid}")
    def patch_track(sid: str, tid: str, body: TrackPatchBody):
        entry = state.entry(sid)
        with entry.lock:
            _check_version(entry, body.version)
            track = entry.session.track_by_id(tid)
            if body.muted is not None:
                if not body.muted and track.muted:
                    active = len(entry.session.active_tracks()) + 1
                    if active > MAX_ACTIVE_TRACKS:
                        raise CapacityError(
                            f"unmuting would make {active} active tracks; the "
                            f"limit is {MAX_ACTIVE_TRACKS}"
                        )
                track.muted = body.muted
            if body.name is not None:
                track.name = body.name
            entry.version += 1
            state.persist(entry)
            return _session_doc(entry)

    @app.put("/api/sessions/{sid}/reference")
    def put_reference(sid: str, body: ReferenceBody):
        entry = state.entry(sid)
        with entry.lock:
            _check_version(entry, body.version)
            segment = Segment(body.segment.start_s, body.segment.end_s)
            ref = ReferenceSource(kind=body.kind, locator=body.locator, segment=segment)
            if ref.kind == "muted_track":
                track = entry.session.track_by_id(ref.locator)
                if not track.muted:
                    raise ValidationError(
                        f"track {track.id!r} must be muted to serve as reference"
                    )
            elif ref.kind == "preset":
                if ref.locator not in preset_names(state.preset_dir):
                    raise NotFoundError(f"no preset named {ref.locator!r}")
            entry.session.reference = ref
            entry.version += 1
            state.persist(entry)
            return _session_doc(entry)

    @app.put("/api/sessions/{sid}/segment")
    def put_segment(sid: str, body: SegmentBody):
        entry = state.entry(sid)
        with entry.lock:
            _check_version(entry, body.version)
            entry.session.input_segment = Segment(body.start_s, body.end_s)
            entry.version += 1
            state.persist(entry)
            return _session_doc(entry)

    # -- params

    @app.get("/api/sessions/{sid}/params")
    def get_params(sid: str):
        entry = state.entry(sid)
        params = entry.session.params
        return {
            "params": None if params is None else params_to_dict(params),
            "version": entry.version,
        }

    @app.put("/api/sessions/{sid}/params")
    def put_params(sid: str, body: ParamsBody):
        entry = state.entry(sid)
        with entry.lock:
            _check_version(entry, body.version)
            doc = {}
            if body.strips is not None and body.master is not None:
                doc = {"strips": body.strips, "master": body.master}
            elif body.theta is not None:
                doc = {"theta": body.theta}
            params = params_from_dict(doc)
            n_active = len(entry.session.active_tracks())
            if params.n_tracks != n_active:
                raise ValidationError(
                    f"params carry {params.n_tracks} strips for {n_active} active tracks"
                )
            entry.session.params = params
            entry.version += 1
            state.persist(entry)
            return {"params": params_to_dict(params), "version": entry.version}

    @app.get("/api/paramspec")
    def get_paramspec():
        return {
            "strip": [_spec_doc(s) for s in STRIP_SPECS],
            "master": [_spec_doc(s) for s in MASTER_SPECS],
        }

    # -- assist jobs

    @app.post("/api/sessions/{sid}/assist")
    def post_assist(sid: str, body: AssistBody):
        entry = state.entry(sid)
        with entry.lock:
            _check_version(entry, body.version)
            session = entry.session
            if body.mode not in ("optimize", "neural"):
                raise ValidationError(f"unknown assist mode {body.mode!r}")
            if session.input_segment is None:
                raise ValidationError(
                    "pick a project section before running the assistant"
                )
            if session.reference is None:
                raise ValidationError("select a reference before running the assistant")
            session.validate()
            buffers, reference = assist_inputs(session, state.preset_dir)
        job = Job(id=uuid.uuid4().hex[:12], session_id=sid, mode=body.mode)
        state.jobs[job.id] = job
        state.executor.submit(_run_assist, state, entry, job, body, buffers, reference)
        return {"job_id": job.id}

    @app.get("/api/jobs/{jid}")
    def get_job(jid: str):
        try:
            return state.jobs[jid].to_dict()
        except KeyError:
            raise NotFoundError(f"no job {jid!r}") from None

    @app.post("/api/jobs/{jid}/cancel")
    def cancel_job(jid: str):
        try:
            job = state.jobs[jid]
        except KeyError:
            raise NotFoundError(f"no job {jid!r}") from None
        job.cancel_event.set()
        with job.lock:
            if job.state == "queued":
                job.state = "cancelled"
        return job.to_dict()

    # -- render and audio

    @app.post("/api/sessions/{sid}/render")
    def post_render(sid: str):
        entry = state.entry(sid)
        with entry.lock:
            session = entry.session
            inputs = model_inputs(session)
            buffers = [buf for _, buf in inputs]
            params = session.params or neutral_params(len(buffers))
            if params.n_tracks != len(buffers):
                raise ValidationError(
                    f"stored params carry {params.n_tracks} strips for "
                    f"{len(buffers)} active tracks"
                )
            mix = render_mix(buffers, params)
            rid = state.store_render(mix)
            return {"resource": rid, "duration_s": mix.duration_s}

    @app.get("/api/audio/{rid}")
    def get_audio(rid: str, start_s: float | None = None, end_s: float | None = None):
        path = state.resource_path(rid)
        if start_s is None and end_s is None:
            return FileResponse(path, media_type="audio/wav")
        buf = load_wav(path)
        segment = Segment(start_s or 0.0, end_s if end_s is not None else buf.duration_s)
        cropped = extract_segment(buf, segment)
        return Response(content=wav_bytes(cropped), media_type="audio/wav")

    @app.get("/api/presets")
    def get_presets():
        return {"presets": preset_names(state.preset_dir)}

    # -- static frontend, when built

    frontend = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if frontend.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend, html=True), name="ui")

    return app


def _run_assist(
    state: ServiceState,
    entry: SessionEntry,
    job: Job,
    body: AssistBody,
    buffers: list[AudioBuffer],
    reference: AudioBuffer,
) -> None:
    with job.lock:
        if job.state == "cancelled":
            return
        job.state = "running"
    try:
        session = entry.session
        if body.mode == "optimize":
            theta, trace = optimize_params(
                buffers,
                reference,
                opt_config=OptimizeConfig(steps=body.steps, seed=body.seed),
                progress=lambda step, total, loss: job.bump_progress(step / total),
                should_stop=job.cancel_event.is_set,
            )
            if job.cancel_event.is_set():
                with job.lock:
                    job.state = "cancelled"
                return
        else:
            weights = state.weights if state.weights is not None else init_weights(body.seed)
            job.bump_progress(0.25)
            out = predict_params(buffers, reference, weights, compute_loss=True)
            theta, trace = out.theta, [out.loss] if out.loss is not None else []
        with entry.lock:
            session.params = denormalize(theta, len(buffers))
            entry.version += 1
            state.persist(entry)
        with job.lock:
            job.theta = theta
            job.loss_trace = [float(x) for x in trace]
            job.progress = 1.0
            job.state = "done"
    except Exception as exc:  # report, never crash the worker
        with job.lock:
            job.state = "failed"
            job.error = str(exc)
