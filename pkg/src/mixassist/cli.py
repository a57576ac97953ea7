"""Batch command line: render, assist, gradcheck, train, features, serve.

Exit codes: 0 success, 1 validation/usage problems, 2 internal errors.
All randomness is seeded through --seed flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import Segment, extract_segment, load_wav, write_wav
from .errors import MixAssistError, ValidationError
from .features import extract_features
from .params import denormalize, load_params, neutral_params, save_params
from .session import assist_inputs, load_session, model_inputs, save_session

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INTERNAL = 2


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _data_root() -> Path:
    return Path(os.environ.get("MIXASSIST_ROOT", Path.cwd() / "mixassist_data"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mixassist", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mixassist {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("render", help="render a session's stored mix parameters")
    p.add_argument("--session", required=True)
    p.add_argument("--params", help="override params JSON (default: session params)")
    p.add_argument("--out", required=True, help="output WAV path")

    p = sub.add_parser("assist", help="predict mix parameters against the reference")
    p.add_argument("--session", required=True)
    p.add_argument("--mode", choices=("optimize", "neural"), default="optimize")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weights", help="controller weights for --mode neural")
    p.add_argument("--preset-dir", help="directory of suggested reference songs")
    p.add_argument("--out-params", required=True)
    p.add_argument("--out-mix")
    p.add_argument(
        "--update-session", action="store_true",
        help="write the predicted params back into the session file",
    )

    p = sub.add_parser("gradcheck", help="verify analytic gradients vs central differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--tracks", type=int, default=2)
    p.add_argument("--duration", type=float, default=0.25)
    p.add_argument("--json", dest="json_out", help="write full reports as JSON")

    p = sub.add_parser("train", help="train the neural controller")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", help="directory of stem sessions (subdirs of WAVs)")
    p.add_argument("--segment", type=float, default=1.0, help="training segment seconds")
    p.add_argument("--out", required=True, help="output weights path")
    p.add_argument("--log", help="JSON-lines training log path")

    p = sub.add_parser("features", help="print style features of a WAV as JSON")
    p.add_argument("--audio", required=True)
    p.add_argument("--start", type=float)
    p.add_argument("--end", type=float)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--root", help="data directory (default $MIXASSIST_ROOT)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--weights", help="controller weights for neural assists")

    return parser


def _cmd_render(args) -> int:
    session = load_session(args.session)
    inputs = model_inputs(session)
    buffers = [buf for _, buf in inputs]
    if args.params:
        params = load_params(args.params)
    elif session.params is not None:
        params = session.params
    else:
        params = neutral_params(len(buffers))
    if params.n_tracks != len(buffers):
        raise ValidationError(
            f"params carry {params.n_tracks} strips for {len(buffers)} active tracks"
        )
    from .console import render_mix

    write_wav(render_mix(buffers, params), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_assist(args) -> int:
    session = load_session(args.session)
    preset_dir = Path(args.preset_dir) if args.preset_dir else _data_root() / "presets"
    buffers, reference = assist_inputs(session, preset_dir)

    if args.mode == "optimize":
        from .optimize import OptimizeConfig, optimize_params

        theta, trace = optimize_params(
            buffers,
            reference,
            opt_config=OptimizeConfig(steps=args.steps, seed=args.seed),
        )
        print(f"optimize: {len(trace)} steps, loss {trace[0]:.6f} -> {min(trace):.6f}")
    else:
        from .controller import init_weights, load_weights, predict_params

        weights = load_weights(args.weights) if args.weights else init_weights(args.seed)
        out = predict_params(buffers, reference, weights)
        theta = out.theta
        print(f"neural: predicted mix loss {out.loss:.6f}")

    params = denormalize(theta, len(buffers))
    save_params(params, args.out_params)
    print(f"wrote {args.out_params}")
    if args.out_mix:
        from .console import render_mix

        write_wav(render_mix(buffers, params), args.out_mix)
        print(f"wrote {args.out_mix}")
    if args.update_session:
        session.params = params
        save_session(session, args.session)
        print(f"updated {args.session}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .grad import gradcheck

    reports = gradcheck(
        seed=args.seed,
        n_configs=args.configs,
        n_tracks=args.tracks,
        duration_s=args.duration,
    )
    all_pass = True
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(
            f"config {r.config_index:2d}: {status}  pass_fraction={r.pass_fraction:.3f} "
            f"basis={int(r.basis.sum())}/{r.n_coords} boundary={r.n_boundary} "
            f"fd_limited={r.n_fd_limited}"
        )
        all_pass &= r.passed
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=2)
        print(f"wrote {args.json_out}")
    return EXIT_OK if all_pass else EXIT_VALIDATION


def _load_stem_dir(root: Path) -> list[list]:
    from .session import ingest_audio

    sessions = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        stems = []
        for wav in sorted(sub.glob("*.wav")):
            stems.extend(ingest_audio(wav))
        if stems:
            sessions.append(stems)
    if not sessions:
        raise ValidationError(f"no stem sessions found under {root}")
    return sessions


def _cmd_train(args) -> int:
    from . import synth
    from .controller import save_weights
    from .train import TrainConfig, train, write_log

    if args.data:
        dataset = _load_stem_dir(Path(args.data))
    else:
        dataset = synth.make_training_dataset(seed=args.seed)
    weights, log = train(
        dataset, TrainConfig(steps=args.steps, seed=args.seed, segment_s=args.segment)
    )
    save_weights(weights, args.out)
    print(f"wrote {args.out}")
    if log:
        first = np.mean([r["loss"] for r in log[:50]] or [0.0])
        last = np.mean([r["loss"] for r in log[-50:]] or [0.0])
        print(f"train: {len(log)} steps, mean loss {first:.4f} -> {last:.4f}")
    if args.log:
        write_log(log, args.log)
        print(f"wrote {args.log}")
    return EXIT_OK


def _cmd_features(args) -> int:
    buf = load_wav(args.audio)
    if args.start is not None or args.end is not None:
        segment = Segment(args.start or 0.0, args.end if args.end is not None else buf.duration_s)
        buf = extract_segment(buf, segment)
    feats = extract_features(buf.to_stereo())
    json.dump(feats.to_dict(), sys.stdout, indent=2)
    print()
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .controller import load_weights
    from .service import create_app

    root = Path(args.root) if args.root else _data_root()
    weights = load_weights(args.weights) if args.weights else None
    app = create_app(root, weights)
    print(f"mixassist service on http://{args.host}:{args.port} (root: {root})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_COMMANDS = {
    "render": _cmd_render,
    "assist": _cmd_assist,
    "gradcheck": _cmd_gradcheck,
    "train": _cmd_train,
    "features": _cmd_features,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except MixAssistError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
