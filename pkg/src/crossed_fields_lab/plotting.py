"""PNG figures for the CLI reports (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

VERDICT_COLORS = {
    "bulk-candidate": "tab:red",
    "boundary-artifact": "tab:gray",
    "excluded-by-virial": "tab:blue",
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_trace_identity(rows: list[dict], path: Path) -> Path:
    """xi'_sigma by both routes for every L, plus the residuals."""
    fig, (ax, axr) = plt.subplots(2, 1, figsize=(6.4, 6.4), sharex=True)
    for L in sorted({r["L"] for r in rows}):
        sub = [r for r in rows if r["L"] == L]
        lam = [r["lambda"] for r in sub]
        (line,) = ax.plot(lam, [r["diff_route"] for r in sub], "-", label=f"L={L:g} difference")
        ax.plot(lam, [r["formula_route"] for r in sub], "o", color=line.get_color(), ms=3, label=f"L={L:g} formula")
        axr.semilogy(lam, np.maximum([r["abs_residual"] for r in sub], 1e-18), "-", color=line.get_color())
    ax.set_ylabel(r"$\xi'_\sigma(\lambda)$")
    ax.legend(fontsize=7)
    axr.set_xlabel(r"$\lambda$")
    axr.set_ylabel("|difference - formula|")
    return _save(fig, path)


def plot_weyl_sweep(rows: list[dict], path: Path) -> Path:
    fig, (ax, axr) = plt.subplots(1, 2, figsize=(9, 3.6))
    h = [r["h"] for r in rows]
    ax.plot(h, [r["numeric"] for r in rows], "o-", label="numeric")
    ax.plot(h, [r["predicted"] for r in rows], "s--", label="predicted")
    ax.set_xlabel("h")
    ax.set_ylabel(r"$\xi_h(\lambda_2) - \xi_h(\lambda_1)$")
    ax.invert_xaxis()
    ax.legend()
    axr.plot(h, [r["scaled_residual"] for r in rows], "o-")
    axr.set_xlabel("h")
    axr.set_ylabel(r"$(2\pi h)^2 \cdot$ |numeric - predicted|")
    axr.invert_xaxis()
    return _save(fig, path)


def plot_eigenscan(report: dict, loc_threshold: float, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4))
    for verdict, color in VERDICT_COLORS.items():
        c = [x for x in report["candidates"] if x["verdict"] == verdict]
        if c:
            ax.semilogy(
                [x["eigenvalue"] for x in c],
                [max(x["boundary_mass"], 1e-16) for x in c],
                "o",
                ms=3,
                color=color,
                label=f"{verdict} ({len(c)})",
            )
    ax.axhline(loc_threshold, color="k", lw=0.8, ls=":")
    ax.set_xlabel("eigenvalue")
    ax.set_ylabel("boundary mass")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_curve(x, y, xlabel: str, ylabel: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 4))
    ax.plot(x, y, "-")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    return _save(fig, path)
