"""Plots the terminal set written by `previewmpc synth` together with the state
trajectories written by `previewmpc compare`."""
import argparse
import csv
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np


def read_columns(path: Path, prefix: str) -> np.ndarray:
    with open(path) as f:
        rows = list(csv.DictReader(f))

    names = [name for name in rows[0] if name.startswith(prefix)]
    return np.array([[float(row[name]) for name in names] for row in rows])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("out", type=Path, help="output directory of synth/compare")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--save", type=Path, default=None)
    args = parser.parse_args()

    fig, ax = plt.subplots(figsize=(6, 6))

    terminal_set = args.out / "terminal_set.csv"
    if terminal_set.is_file():
        boundary = read_columns(terminal_set, "x_")
        ax.fill(boundary[:, 0], boundary[:, 1], alpha=0.3, label="terminal set")

    for trace in sorted((args.out / "traces").glob(f"seed_{args.seed}_*.csv")):
        x = read_columns(trace, "x_")
        ax.plot(x[:, 0], x[:, 1], marker=".", label=trace.stem.split("_")[-1])

    ax.set_xlabel("$x_1$")
    ax.set_ylabel("$x_2$")
    ax.legend()
    ax.grid(True)

    if args.save is not None:
        fig.savefig(args.save, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
