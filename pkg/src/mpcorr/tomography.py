"""Two-qubit state reconstruction from far-field spot statistics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .swap import ProbabilityTable, TomographySetting, _ladder_state, spot_projectors

_PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
PAULI_BASIS = tuple(np.kron(a, b) for a, b in itertools.product(_PAULI, repeat=2))


class RankDeficientSettings(ValueError):
    """The measured settings do not determine the two-qubit state."""


def tomography_settings(k_slm: float, epsilon: float = 0.5, thetas=(0.0, math.pi / 2, math.pi)) -> list:
    """Computational basis plus each grating phase on each window, all combinations."""
    per_window = [TomographySetting(0.0, 0.0, k_slm)] + [TomographySetting(epsilon, t, k_slm) for t in thetas]
    return list(itertools.product(per_window, per_window))


def _design_rows(settings) -> np.ndarray:
    sb, sbp = settings
    eb, ebp = spot_projectors(sb), spot_projectors(sbp)
    rows = []
    for mb in (0, 1):
        for mbp in (0, 1):
            e = np.kron(eb[mb], ebp[mbp])
            obs = np.outer(e.conj(), e)  # P = tr(rho_rung^T obs) = e rho e^dagger
            rows.append([np.real(np.sum(_ladder_state(B / 4).T * obs)) for B in PAULI_BASIS])
    return np.array(rows)


def project_density(m: np.ndarray) -> np.ndarray:
    """Nearest positive semidefinite unit-trace matrix by eigenvalue clipping."""
    h = (m + m.conj().T) / 2
    w, v = np.linalg.eigh(h)
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        raise ValueError("reconstruction has no positive part")
    w /= w.sum()
    return (v * w) @ v.conj().T


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit density matrix."""
    yy = np.kron(_PAULI[2], _PAULI[2])
    tilde = yy @ rho.conj() @ yy
    lam = np.sqrt(np.clip(np.sort(np.real(np.linalg.eigvals(rho @ tilde)))[::-1], 0.0, None))
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def fidelity(rho: np.ndarray, target: np.ndarray) -> float:
    """``<psi|rho|psi>`` for a pure target (normalized here)."""
    t = np.asarray(target, dtype=complex)
    t = t / np.linalg.norm(t)
    return float(np.real(t.conj() @ rho @ t))


@dataclass(frozen=True)
class Reconstruction:
    rho: np.ndarray
    coefficients: np.ndarray
    residual: float
    fidelity: float
    concurrence: float


def reconstruct(tables: list[ProbabilityTable], target=None) -> Reconstruction:
    """Linear least squares over the Pauli expansion, then projection to a state.

    Only the probabilities on the two qubit rungs of each window enter.
    ``target`` is the ideal state vector used for the fidelity; without one
    the fidelity is NaN.
    """
    if not tables:
        raise RankDeficientSettings("no probability tables")
    A = np.concatenate([_design_rows(t.settings) for t in tables])
    y = np.concatenate([t.sub_table().ravel() for t in tables])
    rank = np.linalg.matrix_rank(A, tol=1e-10 * np.abs(A).max())
    if rank < 16:
        raise RankDeficientSettings(f"settings determine only {rank} of 16 Pauli coefficients")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    raw = sum(c * B for c, B in zip(coef, PAULI_BASIS)) / 4
    rho = project_density(raw)
    residual = float(np.linalg.norm(A @ coef - y))
    fid = fidelity(rho, target) if target is not None else float("nan")
    return Reconstruction(rho, coef, residual, fid, concurrence(rho))
