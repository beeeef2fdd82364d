"""Averaged four-photon correlation maps and the grid container they live in.

A four-photon event is described by eight scalar coordinates, four per camera:

``dxa, dya`` : Alice difference ``x1 - x2`` (pixels)
``cxa, cya`` : Alice centre ``(x1 + x2) / 2`` (pixels, from the window centre)
``dxb, dyb, cxb, cyb`` : the same for Bob's ``x1'`` and ``x2'``

A map configuration scans two of them, fixes two and averages the remaining
four.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .correlator import FourPointGeometry, p4
from .model import DefocusParams

COORDS = ("dxa", "dya", "cxa", "cya", "dxb", "dyb", "cxb", "cyb")
MODES = ("window", "lattice")
NORMALIZATIONS = ("max", "raw")
_TOL = 1e-9


def camera_of(coord: str) -> int:
    """0 for Alice coordinates, 1 for Bob."""
    return 0 if coord.endswith("a") else 1


def _slot(coord: str) -> int:
    # column in a per-camera (dx, dy, cx, cy) table
    return ("dx", "dy", "cx", "cy").index(coord[:2])


@dataclass(frozen=True)
class MapConfig:
    """Which coordinates are scanned, fixed and averaged.

    Parameters
    ----------
    scan : pair of coordinate names
        Grid axes ``u`` and ``v``.
    u_range, v_range : (int, int)
        Inclusive scan ranges in pixels.
    fixed : mapping
        Two coordinates held at the given pixel values.
    averaged : tuple
        The remaining four coordinates.
    pitch_um : float
        Pixel pitch.
    mode : {"window", "lattice"}
        ``"window"`` averages over every ordered pair of distinct pixels of a
        ``window`` x ``window`` field of view, the same tuples the stochastic
        estimator uses.  ``"lattice"`` averages each averaged coordinate
        uniformly over ``-avg_halfwidth..avg_halfwidth`` pixels.
    """

    scan: tuple[str, str] = ("dxa", "dxb")
    u_range: tuple[int, int] = (-3, 3)
    v_range: tuple[int, int] = (-3, 3)
    fixed: Mapping[str, float] = field(default_factory=lambda: {"dya": 0.0, "dyb": 0.0})
    averaged: tuple[str, ...] = ("cxa", "cya", "cxb", "cyb")
    pitch_um: float = 2.7
    mode: str = "window"
    window: int = 7
    avg_halfwidth: int = 3
    normalization: str = "max"

    def __post_init__(self):
        object.__setattr__(self, "scan", tuple(self.scan))
        object.__setattr__(self, "averaged", tuple(self.averaged))
        object.__setattr__(self, "fixed", {k: float(v) for k, v in dict(self.fixed).items()})
        object.__setattr__(self, "u_range", tuple(int(x) for x in self.u_range))
        object.__setattr__(self, "v_range", tuple(int(x) for x in self.v_range))
        names = list(self.scan) + list(self.fixed) + list(self.averaged)
        unknown = sorted(set(names) - set(COORDS))
        if unknown:
            raise ValueError(f"unknown coordinates {unknown}; expected names from {COORDS}")
        if len(self.scan) != 2 or len(self.fixed) != 2 or len(self.averaged) != 4:
            raise ValueError("need 2 scan, 2 fixed and 4 averaged coordinates")
        if sorted(names) != sorted(COORDS):
            raise ValueError("scan, fixed and averaged coordinates must partition " + ", ".join(COORDS))
        for name, (lo, hi) in (("u_range", self.u_range), ("v_range", self.v_range)):
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if not (math.isfinite(self.pitch_um) and self.pitch_um > 0):
            raise ValueError("pitch_um must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.window < 2:
            raise ValueError("window must be at least 2 pixels")
        if self.avg_halfwidth < 0:
            raise ValueError("avg_halfwidth must be non-negative")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")

    @property
    def u_px(self) -> np.ndarray:
        return np.arange(self.u_range[0], self.u_range[1] + 1)

    @property
    def v_px(self) -> np.ndarray:
        return np.arange(self.v_range[0], self.v_range[1] + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.u_px), len(self.v_px)

    def metadata(self) -> dict:
        return {
            "fixed": dict(self.fixed),
            "averaged": list(self.averaged),
            "mode": self.mode,
            "window": self.window if self.mode == "window" else None,
            "avg_halfwidth": self.avg_halfwidth if self.mode == "lattice" else None,
        }


@dataclass
class CorrelationGrid:
    """Two-dimensional correlation map over two scan coordinates.

    ``values[i, j]`` belongs to ``u_px[i]``, ``v_px[j]``.  Cells without any
    contributing tuple are NaN.  ``error`` and ``count`` are optional
    companion arrays of the same shape.
    """

    u_name: str
    v_name: str
    u_px: np.ndarray
    v_px: np.ndarray
    pitch_um: float
    values: np.ndarray
    error: np.ndarray | None = None
    count: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u_px = np.asarray(self.u_px, dtype=float)
        self.v_px = np.asarray(self.v_px, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        shape = (len(self.u_px), len(self.v_px))
        if self.values.shape != shape:
            raise ValueError(f"values shape {self.values.shape} does not match axes {shape}")
        for name in ("error", "count"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != shape:
                    raise ValueError(f"{name} shape {arr.shape} does not match axes {shape}")
                setattr(self, name, arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def u_um(self) -> np.ndarray:
        return self.u_px * self.pitch_um

    @property
    def v_um(self) -> np.ndarray:
        return self.v_px * self.pitch_um

    @property
    def normalization(self) -> str:
        return self.meta.get("normalization", "raw")

    def normalized(self) -> "CorrelationGrid":
        """Copy scaled so the largest finite value is 1 (errors scale alike)."""
        peak = np.nanmax(self.values) if np.any(np.isfinite(self.values)) else np.nan
        if not (np.isfinite(peak) and peak > 0):
            raise ValueError("grid has no positive finite value to normalize by")
        err = None if self.error is None else self.error / peak
        meta = dict(self.meta, normalization="max", scale=float(peak) * self.meta.get("scale", 1.0))
        return replace(self, values=self.values / peak, error=err, meta=meta)

    def same_axes(self, other: "CorrelationGrid") -> bool:
        return (
            self.u_name == other.u_name
            and self.v_name == other.v_name
            and np.array_equal(self.u_px, other.u_px)
            and np.array_equal(self.v_px, other.v_px)
            and math.isclose(self.pitch_um, other.pitch_um, rel_tol=1e-12)
        )

    # -- serialization -------------------------------------------------

    def header(self) -> dict:
        return {
            "u_name": self.u_name,
            "v_name": self.v_name,
            "pitch_um": self.pitch_um,
            "shape": list(self.shape),
            "meta": self.meta,
        }

    def to_csv(self, path) -> Path:
        """Long-format CSV with ``# key: json`` header lines."""
        path = Path(path)
        lines = [f"# {key}: {json.dumps(val, sort_keys=True)}" for key, val in self.header().items()]
        lines.append("u_px,v_px,u_um,v_um,value,error,count")
        err = self.error if self.error is not None else np.full(self.shape, np.nan)
        cnt = self.count if self.count is not None else np.full(self.shape, np.nan)
        for i, u in enumerate(self.u_px):
            for j, v in enumerate(self.v_px):
                row = (u, v, u * self.pitch_um, v * self.pitch_um, self.values[i, j], err[i, j], cnt[i, j])
                lines.append(",".join(repr(float(x)) for x in row))
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "CorrelationGrid":
        header = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].partition(":")
                    header[key.strip()] = json.loads(val)
                elif line.startswith("u_px"):
                    continue
                else:
                    rows.append([float(x) for x in line.split(",")])
        try:
            nu, nv = header["shape"]
        except KeyError as exc:
            raise ValueError(f"{path}: missing grid header") from exc
        data = np.array(rows, dtype=float).reshape(nu, nv, 7)
        err = data[..., 5]
        cnt = data[..., 6]
        return cls(
            u_name=header["u_name"],
            v_name=header["v_name"],
            u_px=data[:, 0, 0],
            v_px=data[0, :, 1],
            pitch_um=float(header["pitch_um"]),
            values=data[..., 4],
            error=None if np.all(np.isnan(err)) else err,
            count=None if np.all(np.isnan(cnt)) else cnt,
            meta=header.get("meta", {}),
        )

    def to_pgm(self, path) -> Path:
        """8-bit binary graymap, max-normalized; NaN and negative cells are black."""
        path = Path(path)
        vals = np.nan_to_num(self.values, nan=0.0)
        vals = np.clip(vals, 0.0, None)
        peak = vals.max()
        scaled = vals / peak if peak > 0 else vals
        img = np.round(scaled * 255).astype(np.uint8)
        nu, nv = img.shape
        # rows run along u, columns along v
        path.write_bytes(f"P5\n{nv} {nu}\n255\n".encode() + img.tobytes())
        return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary graymap")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit graymaps are supported")
    return np.frombuffer(parts[4][: width * height], dtype=np.uint8).reshape(height, width)


# -- pair enumeration ----------------------------------------------------


def window_pixels(window: int) -> np.ndarray:
    """Pixel offsets ``(ix, iy)`` of a square window, row-major by ``ix``."""
    idx = np.arange(window)
    ix, iy = np.meshgrid(idx, idx, indexing="ij")
    return np.stack([ix.ravel(), iy.ravel()], axis=1)


def window_pairs(window: int) -> tuple[np.ndarray, np.ndarray]:
    """All ordered pairs of distinct window pixels.

    Returns
    -------
    pairs : (m, 2) int array
        Flat pixel indices ``(i1, i2)``.
    coords : (m, 4) float array
        ``(dx, dy, cx, cy)`` in pixels, centres measured from the window centre.
    """
    pix = window_pixels(window).astype(float)
    n = len(pix)
    i1, i2 = np.nonzero(~np.eye(n, dtype=bool))
    d = pix[i1] - pix[i2]
    c = (pix[i1] + pix[i2]) / 2.0 - (window - 1) / 2.0
    return np.stack([i1, i2], axis=1), np.concatenate([d, c], axis=1)


@dataclass(frozen=True)
class PairSelection:
    """Window pairs that contribute to a map, with their scan-cell labels.

    For camera ``c``, ``pairs[c]`` lists the contributing pixel pairs;
    ``u_index[c]`` and ``v_index[c]`` give the grid row or column each pair
    fixes, or -1 when that axis belongs to the other camera.
    """

    pairs: tuple[np.ndarray, np.ndarray]
    coords: tuple[np.ndarray, np.ndarray]
    u_index: tuple[np.ndarray, np.ndarray]
    v_index: tuple[np.ndarray, np.ndarray]
    shape: tuple[int, int]

    def tuple_cells(self) -> np.ndarray:
        """Flat cell index for every (Alice pair, Bob pair) tuple; -1 where excluded."""
        nu, nv = self.shape
        u = np.maximum(self.u_index[0][:, None], self.u_index[1][None, :])
        v = np.maximum(self.v_index[0][:, None], self.v_index[1][None, :])
        return np.where((u >= 0) & (v >= 0), u * nv + v, -1)


def select_pairs(config: MapConfig) -> PairSelection:
    """Window pairs consistent with the fixed and scanned coordinates."""
    pairs, coords = window_pairs(config.window)
    out_pairs, out_coords, out_u, out_v = [], [], [], []
    axes = ((config.scan[0], config.u_px), (config.scan[1], config.v_px))
    for cam in (0, 1):
        keep = np.ones(len(pairs), dtype=bool)
        for name, val in config.fixed.items():
            if camera_of(name) == cam:
                keep &= np.abs(coords[:, _slot(name)] - val) < _TOL
        labels = []
        for name, ticks in axes:
            if camera_of(name) != cam:
                labels.append(np.full(len(pairs), -1))
                continue
            col = coords[:, _slot(name)]
            pos = np.searchsorted(ticks, np.round(col).astype(int))
            pos = np.clip(pos, 0, len(ticks) - 1)
            hit = np.abs(ticks[pos] - col) < _TOL
            keep &= hit
            labels.append(np.where(hit, pos, -1))
        out_pairs.append(pairs[keep])
        out_coords.append(coords[keep])
        out_u.append(labels[0][keep])
        out_v.append(labels[1][keep])
    return PairSelection(
        pairs=tuple(out_pairs),
        coords=tuple(out_coords),
        u_index=tuple(out_u),
        v_index=tuple(out_v),
        shape=config.shape,
    )


def _points(coords: np.ndarray, pitch: float) -> tuple[np.ndarray, np.ndarray]:
    d = coords[..., 0:2]
    c = coords[..., 2:4]
    return (c + d / 2.0) * pitch, (c - d / 2.0) * pitch


def _finish(config: MapConfig, values, count, extra_meta=None) -> CorrelationGrid:
    meta = config.metadata()
    meta["normalization"] = "raw"
    if extra_meta:
        meta.update(extra_meta)
    grid = CorrelationGrid(
        u_name=config.scan[0],
        v_name=config.scan[1],
        u_px=config.u_px,
        v_px=config.v_px,
        pitch_um=config.pitch_um,
        values=values,
        count=count,
        meta=meta,
    )
    if config.normalization == "max" and np.any(np.isfinite(values) & (values > 0)):
        grid = grid.normalized()
    return grid


def _window_map(config: MapConfig, defocus: DefocusParams) -> CorrelationGrid:
    sel = select_pairs(config)
    xa1, xa2 = _points(sel.coords[0], config.pitch_um)
    xb1, xb2 = _points(sel.coords[1], config.pitch_um)
    geom = FourPointGeometry(xa1[:, None], xa2[:, None], xb1[None, :], xb2[None, :])
    vals = p4(geom, defocus)
    cells = sel.tuple_cells()
    ok = cells >= 0
    ncell = config.shape[0] * config.shape[1]
    total = np.bincount(cells[ok], weights=vals[ok], minlength=ncell)
    count = np.bincount(cells[ok], minlength=ncell).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / count, np.nan)
    return _finish(config, mean.reshape(config.shape), count.reshape(config.shape))


def _lattice_map(config: MapConfig, defocus: DefocusParams) -> CorrelationGrid:
    h = config.avg_halfwidth
    offs = np.arange(-h, h + 1, dtype=float)
    mesh = np.meshgrid(*([offs] * len(config.averaged)), indexing="ij")
    avg = {name: m.ravel() for name, m in zip(config.averaged, mesh)}
    n_avg = len(offs) ** len(config.averaged)
    values = np.empty(config.shape)
    for i, u in enumerate(config.u_px):
        table = {name: np.full(n_avg, val) for name, val in config.fixed.items()}
        table.update(avg)
        table[config.scan[0]] = np.full(n_avg, float(u))
        cols = []
        for v in config.v_px:
            table[config.scan[1]] = np.full(n_avg, float(v))
            cols.append(np.stack([table[name] for name in COORDS], axis=-1))
        c = np.stack(cols)  # (nv, n_avg, 8)
        xa1, xa2 = _points(c[..., 0:4], config.pitch_um)
        xb1, xb2 = _points(c[..., 4:8], config.pitch_um)
        values[i] = p4(FourPointGeometry(xa1, xa2, xb1, xb2), defocus).mean(axis=-1)
    count = np.full(config.shape, float(n_avg))
    return _finish(config, values, count)


def correlation_map(config: MapConfig, defocus: DefocusParams) -> CorrelationGrid:
    """Four-photon probability averaged over the non-scanned, non-fixed coordinates.

    Every cell is an independent pure computation, so the result does not
    depend on evaluation order.  Cells with no contributing tuples (possible
    only in window mode) are NaN.
    """
    if config.mode == "window":
        return _window_map(config, defocus)
    return _lattice_map(config, defocus)
