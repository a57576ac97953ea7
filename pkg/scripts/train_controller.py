#!/usr/bin/env python3
"""Train the neural mix controller on synthetic stems and plot the loss.

A desk-scale run (300 steps, ~4 minutes on a laptop CPU) that writes
weights loadable by `mixassist assist --mode neural --weights ...` and,
when matplotlib is available, a loss-curve PNG.
"""

import argparse
from pathlib import Path

import numpy as np

from mixassist.controller import save_weights
from mixassist.synth import make_training_dataset
from mixassist.train import TrainConfig, train, write_log


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sessions", type=int, default=4)
    parser.add_argument("--out", default="controller.mstw")
    parser.add_argument("--log", default="train_log.jsonl")
    parser.add_argument("--plot", default=None, help="optional loss-curve PNG path")
    args = parser.parse_args()

    dataset = make_training_dataset(seed=args.seed, n_sessions=args.sessions)
    weights, log = train(
        dataset,
        TrainConfig(steps=args.steps, seed=args.seed),
        progress=lambda step, total, loss: print(
            f"step {step:4d}/{total}  loss {loss:.4f}", flush=True
        )
        if step % 25 == 0
        else None,
    )
    save_weights(weights, args.out)
    write_log(log, args.log)
    losses = np.array([r["loss"] for r in log])
    if len(losses) >= 100:
        print(
            f"mean loss first 50: {losses[:50].mean():.4f}  "
            f"last 50: {losses[-50:].mean():.4f}"
        )
    print(f"wrote {args.out} and {args.log}")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(losses, lw=0.7, alpha=0.5, label="per step")
        if len(losses) >= 20:
            kernel = np.ones(20) / 20
            ax.plot(
                np.convolve(losses, kernel, mode="valid"), lw=1.8,
                label="20-step mean",
            )
        ax.set_xlabel("step")
        ax.set_ylabel("style loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
        print(f"wrote {args.plot}")


if __name__ == "__main__":
    main()
