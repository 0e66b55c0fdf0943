"""Figures rendered from the CSV outputs of ``run`` and ``estimate``.

Reads only files already on disk, so plotting never touches a simulation.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .output import read_csv  # noqa: E402

FIGSIZE = (6.0, 3.6)


def _column(header, data, name):
    return data[:, header.index(name)]


def _save(fig, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trajectory(csv_path, out_dir) -> list[Path]:
    header, data = read_csv(csv_path)
    step = _column(header, data, "step")
    written = []

    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(step, _column(header, data, "log_norm_m") / np.log(10), lw=1, label="log10 |m - x*|")
    ax.plot(step, _column(header, data, "log_norm_z") / np.log(10), lw=1, label="log10 |z|")
    ax.set_xlabel("iteration")
    ax.legend(frameon=False)
    written.append(_save(fig, out_dir / "trajectory_norms.png"))

    if "log_det_sigma" in header:
        d = sum(1 for h in header if h.startswith("z_"))
        eig = []
        for row in data:
            s = np.zeros((d, d))
            s[np.triu_indices(d)] = [row[header.index(f"sigma_{i + 1}_{j + 1}")]
                                     for i in range(d) for j in range(i, d)]
            s = s + np.triu(s, 1).T
            eig.append(np.linalg.eigvalsh(s))
        fig, ax = plt.subplots(figsize=FIGSIZE)
        ax.semilogy(step, np.asarray(eig), lw=1)
        ax.set_xlabel("iteration")
        ax.set_ylabel("eigenvalues of normalized covariance")
        written.append(_save(fig, out_dir / "trajectory_sigma_eigenvalues.png"))
    return written


def plot_cr(csv_path, out_dir) -> list[Path]:
    header, data = read_csv(csv_path)
    cr = _column(header, data, "cr")
    slope = _column(header, data, "log_norm_m_slope")
    fig, ax = plt.subplots(figsize=FIGSIZE)
    idx = np.arange(len(cr))
    ax.plot(idx, cr, "o", ms=4, label="rate from normalized chain")
    ax.plot(idx, -slope, "x", ms=5, label="minus slope of log |m|")
    ax.axhline(cr.mean(), color="k", lw=0.8)
    ax.set_xlabel("replica")
    ax.legend(frameon=False)
    return [_save(fig, out_dir / "estimate_cr.png")]


def plot_drift(csv_path, out_dir) -> list[Path]:
    header, data = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.errorbar(_column(header, data, "norm_z"), _column(header, data, "ratio"),
                yerr=1.96 * _column(header, data, "std_error"), fmt="o", capsize=3)
    ax.axhline(1.0, color="k", lw=0.8, ls="--")
    ax.set_xscale("log")
    ax.set_xlabel("|z| at probe")
    ax.set_ylabel("E[V(next)] / V")
    return [_save(fig, out_dir / "estimate_drift.png")]


_RENDERERS = {
    "trajectory.csv": plot_trajectory,
    "estimate_cr.csv": plot_cr,
    "estimate_drift.csv": plot_drift,
}


def render_all(output_dir) -> list[Path]:
    """Render every known CSV found in ``output_dir`` into ``output_dir/figures``."""
    output_dir = Path(output_dir)
    written = []
    for name, fn in _RENDERERS.items():
        path = output_dir / name
        if path.exists():
            written.extend(fn(path, output_dir / "figures"))
    return written
