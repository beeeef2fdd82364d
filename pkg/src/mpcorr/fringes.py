"""Grid comparison metrics and fringe-period estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .maps import COORDS, CorrelationGrid, window_pairs


def normalized_cross_correlation(a: CorrelationGrid, b: CorrelationGrid) -> float:
    """Pearson correlation of two max-normalized grids over cells finite in both."""
    if not a.same_axes(b):
        raise ValueError("grids do not share axes")
    va = a.values / np.nanmax(a.values)
    vb = b.values / np.nanmax(b.values)
    ok = np.isfinite(va) & np.isfinite(vb)
    if ok.sum() < 3:
        raise ValueError("fewer than three common finite cells")
    x = va[ok] - va[ok].mean()
    y = vb[ok] - vb[ok].mean()
    denom = math.sqrt(float(x @ x) * float(y @ y))
    if denom == 0:
        return float("nan")
    return float(x @ y / denom)


def grid_geometry(grid: CorrelationGrid) -> tuple[np.ndarray, np.ndarray]:
    """``S`` and the squared-difference sum ``|d_a|^2 + |d_b|^2`` per cell (um^2).

    Both difference vectors must be fully determined by the scan axes and the
    fixed coordinates.
    """
    fixed = grid.meta.get("fixed", {})
    U, V = np.meshgrid(grid.u_px, grid.v_px, indexing="ij")
    vals = {}
    for name in COORDS:
        if name == grid.u_name:
            vals[name] = U
        elif name == grid.v_name:
            vals[name] = V
        elif name in fixed:
            vals[name] = np.full(U.shape, float(fixed[name]))
    missing = [n for n in ("dxa", "dya", "dxb", "dyb") if n not in vals]
    if missing:
        raise ValueError(f"difference coordinates {missing} are averaged; S is not defined per cell")
    p2 = grid.pitch_um**2
    S = (vals["dxa"] * vals["dxb"] + vals["dya"] * vals["dyb"]) * p2
    Q = (vals["dxa"] ** 2 + vals["dya"] ** 2 + vals["dxb"] ** 2 + vals["dyb"] ** 2) * p2
    return S, Q


def _camera_centres(grid: CorrelationGrid, cam: str, d: tuple[float, float], given: dict) -> np.ndarray:
    # candidate (cx, cy) of one camera given its difference and any pinned centre
    if grid.meta.get("mode") == "window":
        _, coords = window_pairs(int(grid.meta["window"]))
        keep = (np.abs(coords[:, 0] - d[0]) < 1e-9) & (np.abs(coords[:, 1] - d[1]) < 1e-9)
        cands = coords[keep, 2:4]
    else:
        h = int(grid.meta.get("avg_halfwidth", 0))
        offs = np.arange(-h, h + 1, dtype=float)
        cx, cy = np.meshgrid(offs, offs, indexing="ij")
        cands = np.stack([cx.ravel(), cy.ravel()], axis=1)
    for axis, name in enumerate(("cx" + cam, "cy" + cam)):
        if name in given:
            if grid.meta.get("mode") == "window":
                cands = cands[np.abs(cands[:, axis] - given[name]) < 1e-9]
            else:
                cands = cands[:1].copy()
                cands[:, axis] = given[name]
    return cands


def centre_spread(grid: CorrelationGrid) -> list[tuple[np.ndarray, np.ndarray]]:
    """Distribution of ``|c_a - c_b|^2`` (um^2) over the tuples behind each cell.

    Returned row-major over the grid as ``(values, weights)`` pairs.  The
    averaged four-photon probability carries the extra factor
    ``sum_k w_k exp(-alpha s_k)``, which depends on the cell through the
    centre positions a window allows for a given difference.
    """
    fixed = grid.meta.get("fixed", {})
    p2 = grid.pitch_um**2
    out = []
    for u in grid.u_px:
        for v in grid.v_px:
            given = dict(fixed)
            given[grid.u_name] = u
            given[grid.v_name] = v
            cams = []
            for cam in ("a", "b"):
                d = (given["dx" + cam], given["dy" + cam])
                cams.append(_camera_centres(grid, cam, d, given))
            ca, cb = cams
            if len(ca) == 0 or len(cb) == 0:
                out.append((np.zeros(1), np.zeros(1)))
                continue
            s = np.sum((ca[:, None, :] - cb[None, :, :]) ** 2, axis=-1).ravel() * p2
            vals, counts = np.unique(np.round(s, 9), return_counts=True)
            out.append((vals, counts / counts.sum()))
    return out


def _spread_factor(spread, alpha: float) -> np.ndarray:
    return np.array([np.sum(w * np.exp(-alpha * s)) for s, w in spread])


@dataclass(frozen=True)
class FringeFit:
    """Result of fitting ``A exp(-g Q) F(4 g) (cosh(2 g S) + V cos(kappa S + psi))``."""

    period: float
    kappa: float
    gamma: float
    amplitude: float
    visibility: float
    phase: float
    rms_residual: float
    success: bool


def _model(theta, S, Q, spread):
    amp, gamma, vis, kappa, psi = theta
    env = np.exp(-gamma * Q) * _spread_factor(spread, 4 * gamma)
    return amp * env * (np.cosh(2 * gamma * S) + vis * np.cos(kappa * S + psi))


def fit_fringe_period(
    grid: CorrelationGrid,
    kappa_bounds: tuple[float, float] | None = None,
    n_kappa: int = 400,
) -> FringeFit:
    """Fit the fringe wavenumber in ``S`` and return the period ``2 pi / kappa``.

    The envelope follows the averaged four-photon form, including the
    centre-spread factor of :func:`centre_spread`.  A coarse search over
    ``(gamma, kappa)`` with the amplitudes solved linearly seeds a weighted
    nonlinear least-squares refinement.  Cells with an error estimate are
    weighted by its inverse.
    """
    S, Q = grid_geometry(grid)
    y = grid.values
    ok = np.isfinite(y)
    if grid.error is not None:
        ok &= np.isfinite(grid.error) & (grid.error > 0)
    spread = [sp for sp, keep in zip(centre_spread(grid), ok.ravel()) if keep]
    S, Q, y = S[ok], Q[ok], y[ok]
    if y.size < 6:
        raise ValueError("too few finite cells to fit")
    scale = np.max(np.abs(y))
    y = y / scale
    w = np.ones_like(y)
    if grid.error is not None:
        e = grid.error[ok] / scale
        w = 1.0 / e
        w = w / np.median(w)

    dS = np.diff(np.unique(np.round(S, 9)))
    dS = dS[dS > 0]
    span = np.ptp(S)
    if kappa_bounds is None:
        k_lo = 2 * math.pi / max(span, 1e-300)
        k_hi = math.pi / (dS.min() if dS.size else span)
        kappa_bounds = (0.5 * k_lo, k_hi)
    kappas = np.linspace(kappa_bounds[0], kappa_bounds[1], n_kappa)
    qmax = max(np.max(Q), 1e-300)
    gammas = np.concatenate([[0.0], np.geomspace(1e-3, 5.0, 24) / qmax])

    best = (np.inf, None)
    for g in gammas:
        env = np.exp(-g * Q) * _spread_factor(spread, 4 * g)
        base = env * np.cosh(2 * g * S)
        for kap in kappas:
            cols = np.stack([base, env * np.cos(kap * S), env * np.sin(kap * S)], axis=1)
            coef, *_ = np.linalg.lstsq(cols * w[:, None], y * w, rcond=None)
            r = (cols @ coef - y) * w
            cost = float(r @ r)
            if cost < best[0]:
                best = (cost, (g, kap, coef))
    g, kap, (c0, c1, c2) = best[1]
    amp = c0 if c0 != 0 else 1.0
    theta0 = np.array([amp, g, math.hypot(c1, c2) / amp, kap, math.atan2(-c2, c1)])

    res = least_squares(
        lambda t: (_model(t, S, Q, spread) - y) * w,
        theta0,
        bounds=([-np.inf, 0.0, -np.inf, kappa_bounds[0], -np.inf], [np.inf, np.inf, np.inf, kappa_bounds[1] * 1.5, np.inf]),
        x_scale="jac",
    )
    amp, gamma, vis, kappa, psi = res.x
    rms = float(np.sqrt(np.mean((_model(res.x, S, Q, spread) - y) ** 2)))
    return FringeFit(
        period=float(2 * math.pi / kappa),
        kappa=float(kappa),
        gamma=float(gamma),
        amplitude=float(amp * scale),
        visibility=float(vis),
        phase=float(psi),
        rms_residual=rms,
        success=bool(res.success),
    )


def peak_positions(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Local maxima of a sampled profile, refined by a three-point parabola."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(x)
    x, y = x[order], y[order]
    idx, _ = find_peaks(y)
    out = []
    for i in idx:
        y0, y1, y2 = y[i - 1], y[i], y[i + 1]
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        out.append(x[i] + shift * (x[i + 1] - x[i - 1]) / 2)
    return np.array(out)


def peak_spacing(x: np.ndarray, y: np.ndarray) -> float:
    """Mean spacing between consecutive maxima; NaN with fewer than two."""
    peaks = peak_positions(x, y)
    if len(peaks) < 2:
        return float("nan")
    return float((peaks[-1] - peaks[0]) / (len(peaks) - 1))
