"""Figure rendering for simulation traces (headless, files only)."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .netsim import SimulationTrace  # noqa: E402

_FLOOR = 1e-20  # keep log plots defined when an error is exactly zero


def plot_error_norms(trace: SimulationTrace, path, title="Estimation error norms"):
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    for i in range(trace.l):
        ax.semilogy(
            trace.times,
            np.maximum(trace.e_norms[i], _FLOOR),
            lw=1.4,
            label=f"node {i + 1}",
        )
    ax.axhline(1e-3, color="k", ls="--", lw=0.8, label="convergence ball")
    ax.set_xlabel("time [s]")
    ax.set_ylabel(r"$\|z_i - z\|$")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_lyapunov(trace: SimulationTrace, path, title="Lyapunov function along the trace"):
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.semilogy(trace.times, np.maximum(trace.V, _FLOOR), lw=1.4, color="tab:red")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("V")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
