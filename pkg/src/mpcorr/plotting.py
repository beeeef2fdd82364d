"""Figures written alongside the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .maps import CorrelationGrid  # noqa: E402

_PNG_META = {"Software": None}


def _extent(grid: CorrelationGrid):
    du = grid.pitch_um / 2
    return (grid.v_um[0] - du, grid.v_um[-1] + du, grid.u_um[-1] + du, grid.u_um[0] - du)


def _show(ax, grid: CorrelationGrid, title: str):
    vals = np.ma.masked_invalid(grid.values)
    im = ax.imshow(vals, extent=_extent(grid), cmap="magma", interpolation="nearest")
    ax.set_xlabel(f"{grid.v_name} (um)")
    ax.set_ylabel(f"{grid.u_name} (um)")
    ax.set_title(title)
    return im


def plot_grid(grid: CorrelationGrid, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = _show(ax, grid, title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_compare(a: CorrelationGrid, b: CorrelationGrid, path, titles=("A", "B")) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(8.5, 4))
    for ax, g, t in zip(axes, (a.normalized(), b.normalized()), titles):
        im = _show(ax, g, t)
    fig.colorbar(im, ax=axes, shrink=0.85)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_bench(rows: list[dict], path) -> None:
    n = [r["n"] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.semilogy(n, [r["seconds"] for r in rows], "o-", label="gray code")
    orc = [(r["n"], r["oracle_seconds"]) for r in rows if r["oracle_seconds"] == r["oracle_seconds"]]
    if orc:
        ax.semilogy(*zip(*orc), "s--", label="enumeration")
    ax.set_xlabel("n")
    ax.set_ylabel("seconds")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_density(rho: np.ndarray, path) -> None:
    labels = ["00", "01", "10", "11"]
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.6))
    for ax, part, name in zip(axes, (rho.real, rho.imag), ("Re", "Im")):
        im = ax.imshow(part, cmap="RdBu_r", vmin=-0.5, vmax=0.5)
        ax.set_xticks(range(4), labels)
        ax.set_yticks(range(4), labels)
        ax.set_title(f"{name} rho")
    fig.colorbar(im, ax=axes, shrink=0.85)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
