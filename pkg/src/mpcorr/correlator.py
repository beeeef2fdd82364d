"""Closed-form 2n-photon coincidence probabilities for the defocused source.

Every probability here is unnormalized.  ``p2n`` agrees with
``joint_probability`` for the defocused Gaussian wavefunction exactly, while
``p4`` is half of it (the four-photon expression drops a factor of two).
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import (
    DefocusParams,
    RadialProfile,
    SaddlePointWarning,
    phi_defocused_position,
    saddle_validity,
)
from .permanent import DetectionPattern

MAX_P2N_ORDER = 6


def _sq(v) -> np.ndarray:
    return np.sum(np.asarray(v) ** 2, axis=-1)


def p2(x, x_prime, defocus: DefocusParams) -> np.ndarray:
    """Pair coincidence probability ``|Phi(x, x')|^2``; blind to ``beta``."""
    return np.abs(phi_defocused_position(x, x_prime, defocus)) ** 2


@dataclass(frozen=True)
class FourPointGeometry:
    """Two Alice points and two Bob points (um); broadcasts over leading axes."""

    x1: np.ndarray
    x2: np.ndarray
    x1p: np.ndarray
    x2p: np.ndarray

    def __post_init__(self):
        for name in ("x1", "x2", "x1p", "x2p"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape[-1:] != (2,):
                raise ValueError(f"{name} must have a trailing axis of length 2")
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} has non-finite coordinates")
            object.__setattr__(self, name, value)

    @property
    def D(self) -> np.ndarray:
        """Sum of the four squared Alice-Bob distances."""
        return (
            _sq(self.x1 - self.x1p)
            + _sq(self.x1 - self.x2p)
            + _sq(self.x2 - self.x1p)
            + _sq(self.x2 - self.x2p)
        )

    @property
    def D_n(self) -> np.ndarray:
        """The same quantity in the n-photon convention (mean over pairings), ``D / 2``."""
        return self.D / 2.0

    @property
    def S(self) -> np.ndarray:
        """``(x1 - x2) . (x1' - x2')``."""
        return np.sum((self.x1 - self.x2) * (self.x1p - self.x2p), axis=-1)

    def swapped_alice(self) -> "FourPointGeometry":
        return FourPointGeometry(self.x2, self.x1, self.x1p, self.x2p)

    def pattern(self) -> DetectionPattern:
        return DetectionPattern(
            np.stack([self.x1, self.x2]), np.stack([self.x1p, self.x2p]), allow_coincident=True
        )


def p4(geom: FourPointGeometry, defocus: DefocusParams) -> np.ndarray:
    """Four-photon coincidence probability.

    ``exp(-alpha D / 4) (cosh(alpha S / 2) + cos(beta S / 2))``
    """
    S = geom.S
    return np.exp(-defocus.alpha * geom.D / 4.0) * (
        np.cosh(defocus.alpha * S / 2.0) + np.cos(defocus.beta * S / 2.0)
    )


@dataclass(frozen=True)
class PermutationSum:
    """Per-permutation quantities for n Alice and n Bob points.

    ``D_n`` is the mean squared Alice-Bob distance summed over Alice points,
    ``S[k]`` the excess of permutation ``perms[k]`` over that mean.  The ``S``
    values always sum to zero.
    """

    n: int
    perms: tuple[tuple[int, ...], ...]
    D_n: float
    S: np.ndarray

    @property
    def term_count(self) -> int:
        m = len(self.perms)
        return m * (m + 1) // 2


def permutation_sum(pattern: DetectionPattern) -> PermutationSum:
    n = pattern.n
    dist2 = _sq(pattern.alice[:, None, :] - pattern.bob[None, :, :])
    row_mean = dist2.mean(axis=1)
    perms = tuple(itertools.permutations(range(n)))
    idx = np.array(perms)
    rows = np.arange(n)
    S = np.sum(dist2[rows, idx] - row_mean[None, :], axis=1)
    return PermutationSum(n=n, perms=perms, D_n=float(row_mean.sum()), S=S)


def p2n_terms(pattern: DetectionPattern, defocus: DefocusParams) -> np.ndarray:
    """The individual summands of the n-pair expression, before the common prefactor.

    ``n!`` diagonal terms ``exp(-alpha S / 2)`` followed by one cross term
    ``2 exp(-alpha (S + S') / 4) cos(beta (S - S') / 4)`` per unordered pair of
    distinct permutations.
    """
    if pattern.n > MAX_P2N_ORDER:
        raise ValueError(f"n = {pattern.n} exceeds closed-form guard {MAX_P2N_ORDER}")
    ps = permutation_sum(pattern)
    a, b = defocus.alpha, defocus.beta
    S = ps.S
    i, j = np.triu_indices(len(S), k=1)
    diag = np.exp(-a * S / 2.0)
    cross = 2.0 * np.exp(-a * (S[i] + S[j]) / 4.0) * np.cos(b * (S[i] - S[j]) / 4.0)
    return np.concatenate([diag, cross])


def p2n(pattern: DetectionPattern, defocus: DefocusParams) -> float:
    """Closed-form 2n-photon coincidence probability, ``n <= 6``."""
    ps = permutation_sum(pattern)
    terms = p2n_terms(pattern, defocus)
    return float(math.exp(-defocus.alpha * ps.D_n / 2.0) * terms.sum())


def p4_saddle(geom: FourPointGeometry, profile: RadialProfile, z_sum: float, k: float) -> np.ndarray:
    """Four-photon probability from the stationary-phase wavefunction.

    The envelope values ``f_ij = f~(k (x_i - x'_j) / z_sum)`` multiply a fringe
    ``cos(k S / z_sum - phi)`` with ``phi = arg(f_11 f_22 f_12* f_21*)``.
    Validity is checked as in :func:`mpcorr.model.phi_saddle`.
    """
    validity = saddle_validity(profile, z_sum, k)
    if not validity.ok:
        warnings.warn(
            f"saddle-point phase {validity.ratio:.3g} rad below {validity.threshold:.3g} rad",
            SaddlePointWarning,
            stacklevel=2,
        )
    s = k / z_sum
    f11 = profile(s * (geom.x1 - geom.x1p))
    f22 = profile(s * (geom.x2 - geom.x2p))
    f12 = profile(s * (geom.x1 - geom.x2p))
    f21 = profile(s * (geom.x2 - geom.x1p))
    direct = f11 * f22
    exchange = f12 * f21
    phi = np.angle(direct * np.conj(exchange))
    return (
        np.abs(direct) ** 2
        + np.abs(exchange) ** 2
        + 2.0 * np.abs(direct * exchange) * np.cos(s * geom.S - phi)
    )
