#!/usr/bin/env python3
"""Render synthetic preset reference songs into a preset directory.

The service lists every WAV in its presets folder as a suggested
reference, so this is how a fresh data root gets its stock songs.
"""

import argparse
from pathlib import Path

from mixassist.audio import write_wav
from mixassist.synth import make_preset_song

GENRES = ["steady_pop", "wide_ambient", "tight_punch", "bright_lead"]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="mixassist_data/presets")
    parser.add_argument("--duration", type=float, default=12.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(GENRES):
        song = make_preset_song(args.seed + i, duration_s=args.duration)
        path = out / f"{name}.wav"
        write_wav(song, path)
        print(f"wrote {path} ({song.duration_s:.1f}s)")


if __name__ == "__main__":
    main()
