"""Matrix permanents and permanent-based joint detection probabilities."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

try:
    import numba as _nb
except ModuleNotFoundError:  # pragma: no cover
    _nb = None

MAX_ORDER = 24
NAIVE_MAX_ORDER = 10
# The Gray-code loop runs serially; recorded in benchmark metadata.
PARTITIONS = 1


class PermanentOrderError(ValueError):
    """Matrix order above the cost guard."""


def as_complex_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValueError("matrix order must be at least 1")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def _glynn_gray(a):
    # Glynn's formula with delta_0 fixed to +1; one row flips per Gray-code step.
    n = a.shape[0]
    colsum = np.zeros(n, dtype=np.complex128)
    for i in range(n):
        for j in range(n):
            colsum[j] += a[i, j]
    delta = np.ones(n, dtype=np.int64)
    prod = 1.0 + 0.0j
    for j in range(n):
        prod *= colsum[j]
    total = prod
    sign = 1
    for step in range(1, 1 << (n - 1)):
        bit = 0
        s = step
        while (s & 1) == 0:
            s >>= 1
            bit += 1
        row = bit + 1
        delta[row] = -delta[row]
        for j in range(n):
            colsum[j] += 2 * delta[row] * a[row, j]
        sign = -sign
        prod = 1.0 + 0.0j
        for j in range(n):
            prod *= colsum[j]
        total += sign * prod
    return total / (1 << (n - 1))


_glynn_gray_py = _glynn_gray
if _nb is not None:
    try:
        _glynn_gray = _nb.njit(cache=True)(_glynn_gray)
    except Exception:  # pragma: no cover
        _glynn_gray = _glynn_gray_py


def permanent(m) -> complex:
    """Permanent of a square complex matrix by Glynn's formula in Gray-code order.

    Cost is O(2^(n-1) n).  Orders above ``MAX_ORDER`` raise
    :class:`PermanentOrderError`.

    >>> permanent([[1, 2], [3, 4]])
    (10+0j)
    """
    a = as_complex_matrix(m)
    n = a.shape[0]
    if n > MAX_ORDER:
        raise PermanentOrderError(f"order {n} exceeds guard {MAX_ORDER}")
    if n == 1:
        return complex(a[0, 0])
    return complex(_glynn_gray(np.ascontiguousarray(a)))


def permanent_naive(m) -> complex:
    """Permanent by summing over all n! permutations (reference only)."""
    a = as_complex_matrix(m)
    n = a.shape[0]
    if n > NAIVE_MAX_ORDER:
        raise PermanentOrderError(f"order {n} too large for factorial enumeration")
    rows = np.arange(n)
    total = 0j
    for perm in itertools.permutations(range(n)):
        total += np.prod(a[rows, perm])
    return complex(total)


@dataclass(frozen=True)
class DetectionPattern:
    """Positions of ``n`` photons on Alice's camera and ``n`` on Bob's (um).

    Two photons on the same pixel of one camera are rejected unless
    ``allow_coincident`` is set.
    """

    alice: np.ndarray
    bob: np.ndarray
    allow_coincident: bool = False

    def __post_init__(self):
        alice = np.atleast_2d(np.asarray(self.alice, dtype=float))
        bob = np.atleast_2d(np.asarray(self.bob, dtype=float))
        if alice.shape[-1] != 2 or bob.shape[-1] != 2 or alice.ndim != 2 or bob.ndim != 2:
            raise ValueError("points must have shape (n, 2)")
        if len(alice) != len(bob):
            raise ValueError(f"unequal photon numbers: {len(alice)} vs {len(bob)}")
        if len(alice) < 1:
            raise ValueError("need at least one photon per camera")
        if not (np.all(np.isfinite(alice)) and np.all(np.isfinite(bob))):
            raise ValueError("non-finite coordinates")
        if not self.allow_coincident:
            for label, pts in (("alice", alice), ("bob", bob)):
                if len(np.unique(pts, axis=0)) != len(pts):
                    raise ValueError(f"two photons on the same {label} pixel")
        object.__setattr__(self, "alice", alice)
        object.__setattr__(self, "bob", bob)

    @property
    def n(self) -> int:
        return len(self.alice)


def wavefunction_matrix(pattern: DetectionPattern, wavefn: Callable) -> np.ndarray:
    """Matrix with entries ``wavefn(alice[i], bob[j])``."""
    return np.asarray(wavefn(pattern.alice[:, None, :], pattern.bob[None, :, :]), dtype=complex)


def joint_probability(pattern: DetectionPattern, wavefn: Callable) -> float:
    """Unnormalized probability ``|Perm(Phi)|^2`` of the detection pattern.

    ``wavefn(x, x_prime)`` must broadcast over leading axes, as the evaluators
    in :mod:`mpcorr.model` do.
    """
    value = permanent(wavefunction_matrix(pattern, wavefn))
    return float(abs(value) ** 2)
