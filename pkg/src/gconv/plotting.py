"""Figures written next to CLI reports (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def sibling(out: Path, suffix: str) -> Path:
    """report.csv -> report_<suffix>.png in the same directory."""
    out = Path(out)
    return out.with_name(f"{out.stem}_{suffix}.png")


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_convergence(data, path) -> Path:
    """data: [(label, [dx...], [err...]), ...] on log-log axes with a first-order guide."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, dxs, errs in data:
        errs = np.asarray(errs, dtype=float)
        if np.all(errs < 1e-10):
            # exact to rounding; nothing to show on a log scale
            continue
        ax.loglog(dxs, errs, "o-", label=label)
    dxs = np.array([d for _, ds, _ in data for d in ds])
    if dxs.size:
        x = np.array([dxs.min(), dxs.max()])
        ax.loglog(x, 1e-5 * x / x.max(), "k--", lw=0.8, label="order 1")
    ax.set_xlabel("dx")
    ax.set_ylabel("|solve - oracle|")
    ax.set_title("grid convergence")
    ax.legend(fontsize=8)
    return _save(fig, Path(path))


def plot_traces(traces, path) -> Path:
    """traces: [(label, J_history, target), ...]; plots J - target per accepted step."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, hist, target in traces:
        gap = np.asarray(hist, dtype=float) - target
        ax.plot(np.arange(gap.size), np.maximum(gap, 1e-14), label=label)
    ax.set_yscale("log")
    ax.set_xlabel("accepted step")
    ax.set_ylabel("J - target")
    ax.set_title("optimizer traces")
    ax.legend(fontsize=8)
    return _save(fig, Path(path))


def plot_divergence(rep, path) -> Path:
    lam = np.asarray(rep.lambdas, dtype=float)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(lam, rep.values, "o", label="J(-lambda B_t^2)")
    grid = np.linspace(0.0, lam.max(), 50)
    ax.plot(grid, rep.theoretical_slope * grid, "k--", lw=0.8,
            label=f"slope {rep.theoretical_slope:g}")
    ax.set_xlabel("lambda")
    ax.set_ylabel("J")
    ax.legend(fontsize=8)
    return _save(fig, Path(path))


def plot_contract(nodes, psi, path, ylabel="psi") -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(nodes, psi, ".-")
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("x")
    ax.set_ylabel(ylabel)
    ax.set_title("best contract")
    return _save(fig, Path(path))


def report_figures(artifacts: dict, out) -> list:
    """Render whatever a verify report collected; returns the written paths."""
    written = []
    if "convergence" in artifacts:
        written.append(plot_convergence(artifacts["convergence"], sibling(out, "convergence")))
    if "traces" in artifacts:
        written.append(plot_traces(artifacts["traces"], sibling(out, "traces")))
    if "divergence" in artifacts:
        written.append(plot_divergence(artifacts["divergence"], sibling(out, "divergence")))
    return written
