"""Figures for the CLI reports (matplotlib, Agg backend)."""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_coefficients(series: dict, path: str, title: str = "coefficient magnitudes"):
    """``log10 |c_n|`` against ``n`` for named 1-d coefficient arrays ``{name: (lo, c)}``."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (lo, c) in series.items():
        c = np.asarray(c, dtype=float)
        n = np.arange(lo, lo + c.size)
        keep = c > 0
        ax.plot(n[keep], np.log10(c[keep]), ".-", ms=3, label=name)
    ax.set_xlabel("n")
    ax.set_ylabel("log10 |c_n|")
    ax.set_title(title)
    if series:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_residuals(z, res, path: str, tol: float | None = None, title="sample-point residuals"):
    z = np.asarray(z, dtype=complex)
    res = np.maximum(np.asarray(res, dtype=float), 1e-300)
    fig, ax = plt.subplots(figsize=(6, 4))
    sc = ax.scatter(np.log(np.abs(z)), np.angle(z), c=np.log10(res), cmap="viridis", s=18)
    fig.colorbar(sc, ax=ax, label="log10 residual")
    ax.set_xlabel("log |z|")
    ax.set_ylabel("arg z")
    t = title if tol is None else f"{title} (max {res.max():.2e}, tol {tol:g})"
    ax.set_title(t)
    return _save(fig, path)


def plot_flatness(rays: dict, q: complex, path: str):
    """``log|C_ij(z_m)|`` per block with the fitted quadratic.

    ``rays`` maps a label to ``(m, logvals, fit)``.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    lq = math.log(abs(q))
    for label, (m, y, fit) in rays.items():
        m = np.asarray(m, dtype=float)
        line, = ax.plot(m, y, "o", ms=3, label=f"{label}: level {fit.level:.3f}")
        ax.plot(m, fit.const + fit.linear * m - fit.level * m * m * lq / 2, "-",
                color=line.get_color(), lw=0.8)
    ax.set_xlabel("m  (z = z0 q^-m)")
    ax.set_ylabel("log |C_ij|")
    ax.set_title("cocycle flatness along a q-spiral")
    if rays:
        ax.legend(fontsize=7)
    return _save(fig, path)
