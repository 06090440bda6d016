"""Static figures for CLI reports.

SVGs are written without a date stamp and with a fixed hash salt so that
identical data gives byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "epswae",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return path


def latent_scatter(path, posterior, prior=None, curve=None, title=None):
    """3-D scatter of posterior (dots) and prior (crosses) samples, with an
    optional path drawn as a polyline."""
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(5, 5))
        ax = fig.add_subplot(projection="3d")
        ax.scatter(*posterior[:, :3].T, s=3, c="tab:blue", alpha=0.4, label="posterior")
        if prior is not None:
            ax.scatter(*prior[:, :3].T, s=6, c="tab:orange", marker="x", alpha=0.5, label="prior")
        if curve is not None:
            ax.plot(*curve[:, :3].T, "-o", c="k", ms=2, lw=1.2, label="path")
        ax.legend(loc="upper left", fontsize=7)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def spiral_scatter(path, points, clean=None):
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(5, 5))
        ax = fig.add_subplot(projection="3d")
        ax.scatter(*points.T, s=2, c="tab:blue", alpha=0.3)
        if clean is not None:
            order = np.argsort(clean[:, 2])
            ax.plot(*clean[order].T, c="k", lw=0.8)
        return _save(fig, path)


def loss_curves(path, curves, ylabel="loss", logy=True):
    """``curves`` maps a label to per-epoch values, or to ``(mean, std)``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, values in curves.items():
            if isinstance(values, tuple):
                mean, std = (np.asarray(v) for v in values)
                x = np.arange(1, len(mean) + 1)
                ax.plot(x, mean, label=label)
                ax.fill_between(x, mean - std, mean + std, alpha=0.2)
            else:
                ax.plot(np.arange(1, len(values) + 1), values, label=label)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def bench_plot(path, rows):
    """Mean seconds against dimension, one line per kind, log-log."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        labels = sorted({(r.kind, r.full_basis) for r in rows})
        for kind, fb in labels:
            sel = sorted((r for r in rows if (r.kind, r.full_basis) == (kind, fb)), key=lambda r: r.d)
            ax.errorbar([r.d for r in sel], [r.mean_seconds for r in sel],
                        yerr=[r.std_seconds for r in sel], marker="o", capsize=2,
                        label=kind + (" (full basis)" if fb else ""))
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("dimension d")
        ax.set_ylabel("seconds per evaluation")
        ax.legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, path)
