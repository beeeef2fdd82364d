"""Stochastic (Wigner-picture) simulation of the down-converted fields.

Each shot starts from vacuum noise of half a photon per mode in the signal
and idler fields, applies a momentum-space two-mode squeezer and propagates
both fields freely.  Intensities are symmetrically ordered, so half a photon
is removed from every pixel before moments are formed.

The four-point estimator works on window tuples ``(x1, x2)`` on Alice's
camera and ``(x1', x2')`` on Bob's, always with distinct pixels within a
camera.  For a Gaussian state the normally ordered fourth moment is the
permanent of the 4x4 matrix ``Gamma`` of second moments of
``v = (a1, a2, b1*, b2*)``::

    Gamma_ij = E[v_i* v_j] - delta_ij / 2

Its 24 permutation terms fall into these classes:

* identity: product of the four single-pixel intensities
* one Alice-Bob transposition with two fixed points: a twin-pair
  correlation times two singles
* one intra-camera transposition: intra-image bunching times singles or
  times the other camera's bunching
* 3-cycles: mixed products of bunching and pair correlations with a single
* 4-cycles that mix intra-camera and Alice-Bob links
* the two pure Alice-Bob double transpositions and the two Alice-Bob
  4-cycles, which together form ``|M11 M22 + M12 M21|^2`` with
  ``M_ij = <a_i b_j>``

The genuine correlation is the measured fourth moment minus every class
except the last, each evaluated from second moments estimated in the same run.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .maps import CorrelationGrid, MapConfig, PairSelection, select_pairs, window_pixels
from .model import SourceParams

ESTIMATOR_VERSION = "wick-4x4/1"
DEFAULT_CHUNK_SHOTS = 1000
DEFAULT_MIN_SHOTS = 2
_SUBBATCH = 100


class InsufficientStatistics(RuntimeError):
    """Too few shots for the requested estimate."""


class CheckpointMismatch(ValueError):
    """A checkpoint was written for a different configuration."""


@dataclass(frozen=True)
class GridSpec:
    """Square simulation grid.

    Parameters
    ----------
    n_pixels : int
        Pixels per side; a power of two.
    pitch_um : float
        Pixel pitch.
    window : int
        Side of the analysis window in pixels.
    """

    n_pixels: int = 64
    pitch_um: float = 2.7
    window: int = 7

    def __post_init__(self):
        n = self.n_pixels
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_pixels must be a power of two, got {n}")
        if not (math.isfinite(self.pitch_um) and self.pitch_um > 0):
            raise ValueError("pitch_um must be positive")
        if not 2 <= self.window <= n:
            raise ValueError(f"window must lie in [2, {n}], got {self.window}")

    def momenta(self) -> tuple[np.ndarray, np.ndarray]:
        """Angular spatial frequencies ``(px, py)`` on the FFT grid (1/um)."""
        p = 2 * np.pi * np.fft.fftfreq(self.n_pixels, self.pitch_um)
        return np.meshgrid(p, p, indexing="ij")

    def p_squared(self) -> np.ndarray:
        px, py = self.momenta()
        return px * px + py * py


@dataclass(frozen=True)
class FieldFrame:
    """Signal and idler fields of one shot, or of a stack of shots.

    Arrays have shape ``(..., n, n)``; ``shot_index`` matches the leading axes.
    """

    signal: np.ndarray
    idler: np.ndarray
    shot_index: object
    seed: int
    grid: GridSpec

    def __post_init__(self):
        if self.signal.shape != self.idler.shape:
            raise ValueError("signal and idler shapes differ")
        n = self.grid.n_pixels
        if self.signal.shape[-2:] != (n, n):
            raise ValueError(f"fields must end in ({n}, {n})")

    def with_fields(self, signal, idler) -> "FieldFrame":
        return FieldFrame(signal, idler, self.shot_index, self.seed, self.grid)


def shot_generator(seed: int, shot_index: int) -> np.random.Generator:
    """Counter-based stream for one shot; independent of how shots are scheduled."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=int(shot_index) << 128))


def sample_vacuum(grid: GridSpec, seed: int, shots=0) -> FieldFrame:
    """Circular complex Gaussian vacuum noise with ``<|c|^2> = 1/2`` per mode.

    ``shots`` may be a single index or a sequence of indices.
    """
    idx = np.atleast_1d(np.asarray(shots, dtype=np.int64))
    n = grid.n_pixels
    sig = np.empty((len(idx), n, n), dtype=complex)
    idl = np.empty_like(sig)
    for k, s in enumerate(idx):
        z = shot_generator(seed, int(s)).standard_normal((4, n, n))
        sig[k].real, sig[k].imag = z[0], z[1]
        idl[k].real, idl[k].imag = z[2], z[3]
    sig *= 0.5
    idl *= 0.5
    if np.ndim(shots) == 0:
        return FieldFrame(sig[0], idl[0], int(shots), int(seed), grid)
    return FieldFrame(sig, idl, idx, int(seed), grid)


@dataclass(frozen=True)
class GainProfile:
    """Squeezing parameter ``r(p)`` on the FFT grid.

    The profile satisfies ``sinh r cosh r = g exp(-|p|^2 / b^2)``, so the pair
    amplitude ``<a_s(p) a_i(-p)>`` follows the far-field envelope in the
    translation-invariant limit.  ``g`` is set so the mean photon number per
    pixel equals ``gain_peak``.
    """

    r: np.ndarray
    g: float
    gain_peak: float
    calibrated: bool = False

    @classmethod
    def zero(cls, grid: GridSpec) -> "GainProfile":
        return cls(np.zeros((grid.n_pixels,) * 2), 0.0, 0.0, calibrated=True)

    def mean_photons(self) -> float:
        return float(np.mean(np.sinh(self.r) ** 2))


def calibrate_gain(params: SourceParams, grid: GridSpec, gain_peak: float) -> GainProfile:
    """Gain profile whose output carries ``gain_peak`` photons per pixel.

    In the translation-invariant limit the intensity is uniform, so the
    beam-centre value is the spatial mean ``mean_p sinh^2 r(p)``.
    """
    if not (math.isfinite(gain_peak) and gain_peak >= 0):
        raise ValueError("gain_peak must be non-negative")
    if gain_peak == 0:
        return GainProfile.zero(grid)
    shape = np.exp(-grid.p_squared() / params.b**2)
    if shape.mean() * 1e6 < gain_peak:
        raise ValueError("gain_peak unreachable for this bandwidth and grid")

    def r_of(g):
        return 0.5 * np.arcsinh(2 * g * shape)

    g = brentq(lambda g: np.mean(np.sinh(r_of(g)) ** 2) - gain_peak, 0.0, 1e6, xtol=1e-14, rtol=1e-14)
    return GainProfile(r_of(g), float(g), float(gain_peak), calibrated=True)


def _flip(a: np.ndarray) -> np.ndarray:
    # a(p) -> a(-p) on the FFT grid
    n = a.shape[-1]
    neg = (-np.arange(n)) % n
    return a[..., neg, :][..., neg]


def apply_gain(frame: FieldFrame, gain: GainProfile) -> FieldFrame:
    """Two-mode Bogoliubov transform between signal ``p`` and idler ``-p``."""
    if not getattr(gain, "calibrated", False):
        raise ValueError("gain profile is not calibrated")
    if gain.r.shape != frame.signal.shape[-2:]:
        raise ValueError("gain profile does not match the frame grid")
    if not np.any(gain.r):
        return frame
    c, s = np.cosh(gain.r), np.sinh(gain.r)
    As = np.fft.fft2(frame.signal, norm="ortho")
    Ai = np.fft.fft2(frame.idler, norm="ortho")
    Bs = c * As + s * np.conj(_flip(Ai))
    Bi = c * Ai + s * np.conj(_flip(As))
    return frame.with_fields(np.fft.ifft2(Bs, norm="ortho"), np.fft.ifft2(Bi, norm="ortho"))


def transfer_function(grid: GridSpec, distance: float, k: float) -> np.ndarray:
    return np.exp(-1j * distance * grid.p_squared() / (2.0 * k))


def propagate(frame: FieldFrame, distance: float, k: float, idler_distance: float | None = None) -> FieldFrame:
    """Free paraxial propagation of both fields (the idler by ``idler_distance`` if given)."""
    d_idl = distance if idler_distance is None else idler_distance
    if distance < 0 or d_idl < 0:
        raise ValueError("propagation distance must be non-negative")
    out = []
    for field_, d in ((frame.signal, distance), (frame.idler, d_idl)):
        if d == 0:
            out.append(field_)
            continue
        h = transfer_function(frame.grid, d, k)
        out.append(np.fft.ifft2(np.fft.fft2(field_, norm="ortho") * h, norm="ortho"))
    return frame.with_fields(*out)


# -- accumulation --------------------------------------------------------


def tile_windows(fields: np.ndarray, window: int) -> np.ndarray:
    """Cut ``(..., n, n)`` fields into non-overlapping windows, ``(samples, window**2)``."""
    n = fields.shape[-1]
    t = n // window
    if t < 1:
        raise ValueError(f"window {window} exceeds grid {n}")
    f = fields.reshape(-1, n, n)[:, : t * window, : t * window]
    f = f.reshape(-1, t, window, t, window).transpose(0, 1, 3, 2, 4)
    return f.reshape(-1, window * window)


@dataclass
class ChunkSums:
    """Raw sums from one chunk of shots."""

    shots: int
    samples: int
    m4_cells: np.ndarray
    s_aa: np.ndarray
    s_bb: np.ndarray
    s_ab: np.ndarray

    def __add__(self, other: "ChunkSums") -> "ChunkSums":
        return ChunkSums(
            self.shots + other.shots,
            self.samples + other.samples,
            self.m4_cells + other.m4_cells,
            self.s_aa + other.s_aa,
            self.s_bb + other.s_bb,
            self.s_ab + other.s_ab,
        )


@dataclass
class G4Accumulator:
    """Per-chunk sums for the genuine four-point estimator.

    Chunks are keyed by index.  Merging two accumulators is a disjoint union;
    all totals are formed by summing chunks in index order, so the result
    depends only on which chunks are present.
    """

    config: MapConfig
    chunks: dict = field(default_factory=dict)
    config_hash: str = ""

    def __post_init__(self):
        if self.config.mode != "window":
            raise ValueError("the stochastic estimator needs a window-mode map config")
        self._sel = select_pairs(self.config)
        self._cells = self._sel.tuple_cells()

    @property
    def selection(self) -> PairSelection:
        return self._sel

    @property
    def shots(self) -> int:
        return sum(c.shots for c in self.chunks.values())

    def chunk_sums(self, signal: np.ndarray, idler: np.ndarray) -> ChunkSums:
        """Sums over a stack of frames, without touching the accumulator."""
        w = self.config.window
        wa = tile_windows(signal, w)
        wb = tile_windows(idler, w)
        shots = int(np.prod(signal.shape[:-2])) if signal.ndim > 2 else 1
        pa, pb = self._sel.pairs
        m4 = np.zeros((len(pa), len(pb)))
        per_shot = len(wa) // shots
        step = max(1, _SUBBATCH * per_shot)
        for s0 in range(0, len(wa), step):
            ia = np.abs(wa[s0 : s0 + step]) ** 2 - 0.5
            ib = np.abs(wb[s0 : s0 + step]) ** 2 - 0.5
            PA = ia[:, pa[:, 0]] * ia[:, pa[:, 1]]
            PB = ib[:, pb[:, 0]] * ib[:, pb[:, 1]]
            m4 += PA.T @ PB
        ok = self._cells >= 0
        ncell = self.config.shape[0] * self.config.shape[1]
        cells = np.bincount(self._cells[ok], weights=m4[ok], minlength=ncell)
        return ChunkSums(
            shots=shots,
            samples=len(wa),
            m4_cells=cells,
            s_aa=np.conj(wa).T @ wa,
            s_bb=wb.T @ np.conj(wb),
            s_ab=np.conj(wa).T @ np.conj(wb),
        )

    def add_chunk(self, index: int, sums: ChunkSums) -> None:
        if index in self.chunks:
            raise ValueError(f"chunk {index} already accumulated")
        self.chunks[int(index)] = sums

    def accumulate(self, index: int, signal: np.ndarray, idler: np.ndarray) -> "G4Accumulator":
        self.add_chunk(index, self.chunk_sums(signal, idler))
        return self

    def merge(self, other: "G4Accumulator") -> "G4Accumulator":
        if other.config_hash != self.config_hash:
            raise CheckpointMismatch("accumulators come from different configurations")
        overlap = set(self.chunks) & set(other.chunks)
        if overlap:
            raise ValueError(f"chunks accumulated twice: {sorted(overlap)}")
        out = G4Accumulator(self.config, dict(self.chunks), self.config_hash)
        out.chunks.update(other.chunks)
        return out

    def total(self, indices=None) -> ChunkSums:
        keys = sorted(self.chunks if indices is None else indices)
        if not keys:
            raise InsufficientStatistics("no shots accumulated")
        tot = self.chunks[keys[0]]
        for k in keys[1:]:
            tot = tot + self.chunks[k]
        return tot

    # -- persistence --------------------------------------------------

    def save(self, path) -> None:
        keys = sorted(self.chunks)
        arrays = {"keys": np.array(keys, dtype=np.int64), "config_hash": np.array(self.config_hash)}
        for name in ("shots", "samples"):
            arrays[name] = np.array([getattr(self.chunks[k], name) for k in keys], dtype=np.int64)
        for name in ("m4_cells", "s_aa", "s_bb", "s_ab"):
            arrays[name] = np.array([getattr(self.chunks[k], name) for k in keys])
        tmp = f"{path}.tmp.npz"
        np.savez(tmp, **arrays)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path, config: MapConfig, config_hash: str) -> "G4Accumulator":
        with np.load(path) as data:
            stored = str(data["config_hash"])
            if stored != config_hash:
                raise CheckpointMismatch(f"checkpoint {path} was written for another configuration")
            acc = cls(config, {}, config_hash)
            for i, k in enumerate(data["keys"]):
                acc.chunks[int(k)] = ChunkSums(
                    int(data["shots"][i]),
                    int(data["samples"][i]),
                    data["m4_cells"][i].copy(),
                    data["s_aa"][i].copy(),
                    data["s_bb"][i].copy(),
                    data["s_ab"][i].copy(),
                )
        return acc


_PERMS = tuple(itertools.permutations(range(4)))
# permutations sending both Alice slots to Bob slots
_GENUINE = tuple(p for p in _PERMS if p[0] >= 2 and p[1] >= 2)


def _gamma_blocks(tot: ChunkSums):
    n = tot.samples
    eye = 0.5 * np.eye(tot.s_aa.shape[0])
    return tot.s_aa / n - eye, tot.s_bb / n - eye, tot.s_ab / n


def accidental_terms(g_aa, g_bb, g_ab, sel: PairSelection) -> np.ndarray:
    """Per-tuple sum of every permanent term except the twin-pair interference.

    ``g_aa[i, j] = <a_i* a_j>``, ``g_bb[i, j] = <b_i b_j*>`` and
    ``g_ab[i, j] = <a_i* b_j*>``, all normally ordered.
    """
    pa, pb = sel.pairs
    idx = (pa[:, 0][:, None], pa[:, 1][:, None], pb[:, 0][None, :], pb[:, 1][None, :])

    def G(u, v):
        if u < 2 and v < 2:
            return g_aa[idx[u], idx[v]]
        if u >= 2 and v >= 2:
            return g_bb[idx[u], idx[v]]
        if u < 2:
            return g_ab[idx[u], idx[v]]
        return np.conj(g_ab[idx[v], idx[u]])

    cache = {(u, v): G(u, v) for u in range(4) for v in range(4)}
    acc = np.zeros((len(pa), len(pb)), dtype=complex)
    for p in _PERMS:
        if p in _GENUINE:
            continue
        acc += cache[0, p[0]] * cache[1, p[1]] * cache[2, p[2]] * cache[3, p[3]]
    return acc.real


def pair_interference(m_ab: np.ndarray, sel: PairSelection) -> np.ndarray:
    """``|M11 M22 + M12 M21|^2`` per tuple from the pair amplitudes ``m_ab[i, j] = <a_i b_j>``."""
    pa, pb = sel.pairs
    a1, a2 = pa[:, 0][:, None], pa[:, 1][:, None]
    b1, b2 = pb[:, 0][None, :], pb[:, 1][None, :]
    return np.abs(m_ab[a1, b1] * m_ab[a2, b2] + m_ab[a1, b2] * m_ab[a2, b1]) ** 2


def _cell_estimate(acc: G4Accumulator, tot: ChunkSums) -> np.ndarray:
    sel = acc.selection
    cells = acc._cells
    ok = cells >= 0
    ncell = acc.config.shape[0] * acc.config.shape[1]
    count = np.bincount(cells[ok], minlength=ncell).astype(float)
    acc_terms = accidental_terms(*_gamma_blocks(tot), sel)
    sub = np.bincount(cells[ok], weights=acc_terms[ok], minlength=ncell)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = (tot.m4_cells / tot.samples - sub) / count
    est[count == 0] = np.nan
    return est


def genuine_g4(acc: G4Accumulator, min_shots: int = DEFAULT_MIN_SHOTS, n_groups: int = 16) -> CorrelationGrid:
    """Genuine four-point correlation per cell with a jackknife error grid.

    Errors come from deleting one of up to ``n_groups`` chunk groups (chunk
    index modulo the group count).  With fewer than two chunks the error grid
    is NaN and the grid is flagged as low-statistics.
    """
    if acc.shots < max(min_shots, 1):
        raise InsufficientStatistics(f"{acc.shots} shots accumulated, need at least {min_shots}")
    tot = acc.total()
    est = _cell_estimate(acc, tot)
    keys = sorted(acc.chunks)
    K = min(n_groups, len(keys))
    if K >= 2:
        groups = [[k for k in keys if k % K == g] for g in range(K)]
        groups = [g for g in groups if g]
        K = len(groups)
        loo = []
        for g in groups:
            rest = [k for k in keys if k not in set(g)]
            loo.append(_cell_estimate(acc, acc.total(rest)))
        loo = np.array(loo)
        err = np.sqrt((K - 1) / K * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    else:
        err = np.full_like(est, np.nan)
    cfg = acc.config
    sel = acc.selection
    count = np.bincount(sel.tuple_cells()[sel.tuple_cells() >= 0], minlength=est.size).astype(float)
    meta = cfg.metadata()
    meta.update(
        normalization="raw",
        shots=acc.shots,
        samples=tot.samples,
        estimator=ESTIMATOR_VERSION,
        low_statistics=bool(K < 2),
        jackknife_groups=int(K) if K >= 2 else 0,
    )
    grid = CorrelationGrid(
        u_name=cfg.scan[0],
        v_name=cfg.scan[1],
        u_px=cfg.u_px,
        v_px=cfg.v_px,
        pitch_um=cfg.pitch_um,
        values=est.reshape(cfg.shape),
        error=err.reshape(cfg.shape),
        count=count.reshape(cfg.shape),
        meta=meta,
    )
    if cfg.normalization == "max" and np.any(np.isfinite(est) & (est > 0)):
        grid = grid.normalized()
    return grid


# -- runs ----------------------------------------------------------------


@dataclass(frozen=True)
class StochasticSetup:
    """Everything that determines a stochastic run's data."""

    source: SourceParams
    grid: GridSpec
    map_config: MapConfig
    gain_peak: float = 0.6
    n_shots: int = 50_000
    chunk_shots: int = DEFAULT_CHUNK_SHOTS
    seed: int = 0

    def __post_init__(self):
        if self.n_shots < 1:
            raise ValueError("n_shots must be positive")
        if self.chunk_shots < 1:
            raise ValueError("chunk_shots must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.map_config.window != self.grid.window:
            raise ValueError("map window and grid window differ")
        if not math.isclose(self.map_config.pitch_um, self.grid.pitch_um):
            raise ValueError("map pitch and grid pitch differ")

    @property
    def n_chunks(self) -> int:
        return -(-self.n_shots // self.chunk_shots)

    def chunk_range(self, index: int) -> range:
        start = index * self.chunk_shots
        return range(start, min(start + self.chunk_shots, self.n_shots))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["map_config"]["fixed"] = dict(self.map_config.fixed)
        return d

    def config_hash(self) -> str:
        blob = json.dumps({"setup": self.as_dict(), "estimator": ESTIMATOR_VERSION}, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()

    def new_accumulator(self) -> G4Accumulator:
        return G4Accumulator(self.map_config, {}, self.config_hash())


def simulate_frames(setup: StochasticSetup, shots, gain: GainProfile | None = None) -> FieldFrame:
    """Vacuum, gain and propagation for the given shot indices."""
    if gain is None:
        gain = calibrate_gain(setup.source, setup.grid, setup.gain_peak)
    frame = sample_vacuum(setup.grid, setup.seed, shots)
    frame = apply_gain(frame, gain)
    return propagate(frame, setup.source.z, setup.source.k, setup.source.z_prime)


def _chunk_job(args):
    setup, index = args
    acc = setup.new_accumulator()
    frame = simulate_frames(setup, list(setup.chunk_range(index)))
    return index, acc.chunk_sums(frame.signal, frame.idler)


def run_stochastic(
    setup: StochasticSetup,
    workers: int = 1,
    acc: G4Accumulator | None = None,
    stop_after_shots: int | None = None,
    on_chunk=None,
) -> G4Accumulator:
    """Simulate every chunk not yet in ``acc``.

    With ``stop_after_shots`` only chunks lying entirely below that shot
    index are run, so a later call can resume from a checkpoint.
    ``on_chunk(acc)`` is called after each completed chunk.
    """
    if acc is None:
        acc = setup.new_accumulator()
    elif acc.config_hash != setup.config_hash():
        raise CheckpointMismatch("accumulator belongs to another configuration")
    limit = setup.n_shots if stop_after_shots is None else min(stop_after_shots, setup.n_shots)
    todo = [i for i in range(setup.n_chunks) if i not in acc.chunks and setup.chunk_range(i).stop <= limit]
    jobs = [(setup, i) for i in todo]
    if workers <= 1 or len(jobs) <= 1:
        for job in jobs:
            acc.add_chunk(*_chunk_job(job))
            if on_chunk:
                on_chunk(acc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, sums in pool.map(_chunk_job, jobs):
                acc.add_chunk(index, sums)
                if on_chunk:
                    on_chunk(acc)
    return acc


def analytic_pair_amplitudes(setup: StochasticSetup, gain: GainProfile | None = None) -> np.ndarray:
    """Exact ``<a_i b_j>`` between window pixels for the simulated Gaussian state.

    Useful as a lattice reference: it includes the finite pixel grid and the
    finite gain that the continuum formulas neglect.
    """
    if gain is None:
        gain = calibrate_gain(setup.source, setup.grid, setup.gain_peak)
    g = setup.grid
    src = setup.source
    # <A_s(p) A_i(-p)> = sinh r cosh r, propagated with both transfer functions
    amp = np.sinh(gain.r) * np.cosh(gain.r)
    h_s = transfer_function(g, src.z, src.k)
    h_i = _flip(transfer_function(g, src.z_prime, src.k))
    # <a(x) b(x')> is a function of x - x' only
    kernel = np.fft.ifft2(amp * h_s * h_i)
    pix = window_pixels(g.window)
    d = (pix[:, None, :] - pix[None, :, :]) % g.n_pixels
    return kernel[d[..., 0], d[..., 1]]
