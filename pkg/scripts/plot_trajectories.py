#!/usr/bin/env python3
"""
Render trajectory and training-loss figures from trajectory CSV logs.

Runs out of process: it only reads the CSV files the lab writes, so plotting
never touches a live experiment.
"""
import argparse
import os
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT / "control-lab"))
sys.path.insert(0, str(PROJECT_ROOT))

from app.logs import read_csv  # noqa: E402


def plot_log(csv_path: str, out_dir: str) -> str:
    """
    Four panels: position vs reference, tracking error, control input and the
    residual estimate against the true residual, plus the loss when present.

    Returns:
        Path of the written PNG
    """
    log = read_csv(csv_path)
    frame = log.to_frame()
    has_loss = frame["loss"].notna().any()
    rows = 3 if has_loss else 2
    fig, axes = plt.subplots(rows, 2, figsize=(14, 4 * rows), sharex=True)

    ax = axes[0, 0]
    ax.plot(frame["t"], frame["pr"], "k--", linewidth=1.0, label="reference")
    ax.plot(frame["t"], frame["p"], "b-", linewidth=1.5, label="position")
    ax.set_ylabel("p [m]")
    ax.legend(loc="upper right")

    ax = axes[0, 1]
    ax.plot(frame["t"], (frame["p"] - frame["pr"]).abs(), "r-", linewidth=1.0)
    ax.set_ylabel("|p - p_r| [m]")

    ax = axes[1, 0]
    ax.plot(frame["t"], frame["u"], "k-", linewidth=1.0)
    ax.set_ylabel("u [N]")

    ax = axes[1, 1]
    ax.plot(frame["t"], frame["r_true"], "k-", linewidth=1.0, label="true residual")
    if frame["r_hat"].notna().any():
        ax.plot(frame["t"], frame["r_hat"], "b-", linewidth=1.0, alpha=0.8, label="estimate")
    ax.set_ylabel("R [N]")
    ax.legend(loc="upper right")

    if has_loss:
        ax = axes[2, 0]
        ax.semilogy(frame["t"], frame["loss"], "m-", linewidth=1.0)
        ax.set_ylabel("training loss")
        axes[2, 1].axis("off")

    for ax in axes[-1]:
        ax.set_xlabel("t [s]")
    status = "diverged" if log.diverged else "completed"
    fig.suptitle(f"{log.label}  seed {log.seed}  ({status})", fontsize=12)
    fig.tight_layout()

    os.makedirs(out_dir, exist_ok=True)
    target = os.path.join(out_dir, Path(csv_path).stem + ".png")
    fig.savefig(target, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return target


def main() -> int:
    parser = argparse.ArgumentParser(description="Plot trajectory CSV logs written by the control lab.")
    parser.add_argument("logs", nargs="+", help="Trajectory CSV files")
    parser.add_argument("--out", default="figures", help="Output directory for PNG files (default: figures)")
    args = parser.parse_args()

    failures = 0
    for csv_path in args.logs:
        try:
            print(f"wrote {plot_log(csv_path, args.out)}")
        except (OSError, ValueError) as e:
            print(f"cannot plot {csv_path}: {e}", file=sys.stderr)
            failures += 1
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
