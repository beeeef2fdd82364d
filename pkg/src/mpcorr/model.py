"""Source parameters and biphoton wavefunctions.

All lengths are in micrometres and all transverse momenta in inverse
micrometres.  Wavefunctions carry a unit prefactor: every probability built
from them is unnormalized and only ratios are meaningful.

Points are passed as array-likes whose last axis holds ``(x, y)``; every
evaluator broadcasts over the leading axes.

Fourier convention: ``Phi~(p) = integral Phi(x) exp(-i p.x) dx``, so a position
wavefunction is recovered as ``(2 pi)^-2 integral Phi~(p) exp(+i p.x) dp``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, NamedTuple

import numpy as np

CONFIG_KEYS = ("w0_um", "b_inv_um", "k_inv_um", "z_um", "zprime_um")


class TransversePoint(NamedTuple):
    """A point on a detection plane, or a transverse momentum."""

    x: float
    y: float


@dataclass(frozen=True)
class SourceParams:
    """Physical parameters of the down-conversion source and detection geometry.

    Parameters
    ----------
    w0 : float
        Pump waist (um).
    b : float
        Inverse width of the near-field pair correlation (1/um).
    k : float
        Longitudinal wavenumber of signal and idler photons (1/um).
    z, z_prime : float
        Propagation distances to Alice's and Bob's detection planes (um).
    """

    w0: float
    b: float
    k: float
    z: float = 0.0
    z_prime: float = 0.0

    def __post_init__(self):
        for name in ("w0", "b", "k"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        for name in ("z", "z_prime"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be non-negative and finite, got {value!r}")

    @property
    def z_sum(self) -> float:
        return self.z + self.z_prime

    def defocus(self) -> "DefocusParams":
        return derive_defocus(self)

    def to_config(self) -> dict[str, str]:
        """Flat key/value form with units in the key names."""
        values = (self.w0, self.b, self.k, self.z, self.z_prime)
        return {key: repr(float(v)) for key, v in zip(CONFIG_KEYS, values)}

    @classmethod
    def from_config(cls, section: Mapping[str, object]) -> "SourceParams":
        unknown = set(section) - set(CONFIG_KEYS)
        if unknown:
            raise KeyError(f"unknown source keys: {sorted(unknown)}")
        missing = [key for key in CONFIG_KEYS[:3] if key not in section]
        if missing:
            raise KeyError(f"missing source keys: {missing}")
        return cls(
            w0=float(section["w0_um"]),
            b=float(section["b_inv_um"]),
            k=float(section["k_inv_um"]),
            z=float(section.get("z_um", 0.0)),
            z_prime=float(section.get("zprime_um", 0.0)),
        )


@dataclass(frozen=True)
class DefocusParams:
    """Parameters of the translation-invariant defocused wavefunction.

    ``alpha`` sets the Gaussian envelope and ``beta`` the quadratic phase,
    both in 1/um^2.  ``Z`` is the dimensionless defocus and ``schmidt_K`` the
    Schmidt number of the near-field state.
    """

    alpha: float
    beta: float
    Z: float
    schmidt_K: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be non-negative, got {self.beta!r}")

    @classmethod
    def from_alpha_beta(cls, alpha: float, beta: float) -> "DefocusParams":
        """Build from the envelope and phase parameters directly."""
        return cls(alpha=alpha, beta=beta, Z=beta / alpha)


def derive_defocus(params: SourceParams) -> DefocusParams:
    """Defocus parameters ``Z``, ``alpha``, ``beta`` and the Schmidt number."""
    b2 = params.b**2
    Z = b2 * params.z_sum / (2.0 * params.k)
    alpha = b2 / (1.0 + Z * Z)
    beta = b2 * Z / (1.0 + Z * Z)
    u = params.b * params.w0
    schmidt = 0.25 * (u + 1.0 / u) ** 2
    return DefocusParams(alpha=alpha, beta=beta, Z=Z, schmidt_K=schmidt)


def _sq(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.sum(v * v, axis=-1)


def phi_near(x, x_prime, params: SourceParams) -> np.ndarray:
    """Near-field (crystal surface) biphoton wavefunction; real and positive."""
    x = np.asarray(x, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    arg = -_sq(x + x_prime) / (4.0 * params.w0**2) - params.b**2 * _sq(x - x_prime) / 4.0
    return np.exp(arg).astype(complex)


def phi_far(p, p_prime, params: SourceParams) -> np.ndarray:
    """Far-field (momentum) biphoton wavefunction; real, positive and at most 1."""
    p = np.asarray(p, dtype=float)
    p_prime = np.asarray(p_prime, dtype=float)
    arg = -params.w0**2 * _sq(p + p_prime) / 4.0 - _sq(p - p_prime) / (4.0 * params.b**2)
    return np.exp(arg).astype(complex)


def phi_defocused_momentum(p, p_prime, params: SourceParams) -> np.ndarray:
    """Momentum wavefunction after free propagation over ``z`` and ``z_prime``."""
    phase = -(params.z * _sq(p) + params.z_prime * _sq(p_prime)) / (2.0 * params.k)
    return phi_far(p, p_prime, params) * np.exp(1j * phase)


def phi_defocused_position(x, x_prime, defocus: DefocusParams) -> np.ndarray:
    """Defocused position wavefunction in the translation-invariant limit.

    ``exp(-(alpha - i beta) |x - x'|^2 / 4)``
    """
    d2 = _sq(np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float))
    return np.exp(-(defocus.alpha - 1j * defocus.beta) * d2 / 4.0)


@dataclass(frozen=True)
class RadialProfile:
    """Slowly varying momentum envelope ``f~(p)`` of a translation-invariant source.

    Parameters
    ----------
    radial : callable
        Envelope as a function of ``|p|`` (1/um); must accept arrays.
    support_radius : float
        Momentum radius outside which the envelope is negligible.
    """

    radial: Callable[[np.ndarray], np.ndarray]
    support_radius: float
    name: str = "custom"

    def __post_init__(self):
        if not self.support_radius > 0:
            raise ValueError("support_radius must be positive")

    def __call__(self, p) -> np.ndarray:
        r = np.sqrt(_sq(p))
        return np.asarray(self.radial(r), dtype=complex)

    @classmethod
    def gaussian(cls, b: float) -> "RadialProfile":
        """Envelope of the Gaussian source, ``exp(-|p|^2 / b^2)``.

        This is the far-field wavefunction restricted to ``p' = -p``; the support
        radius is taken where it has fallen to ``exp(-4)``.
        """
        return cls(radial=lambda r: np.exp(-(r * r) / b**2), support_radius=2.0 * b, name="gaussian")


class SaddlePointWarning(UserWarning):
    """Propagation distance too short for the stationary-phase approximation."""


@dataclass(frozen=True)
class SaddleValidity:
    ratio: float
    threshold: float

    @property
    def ok(self) -> bool:
        return self.ratio >= self.threshold


def saddle_validity(profile: RadialProfile, z_sum: float, k: float) -> SaddleValidity:
    """Quadratic phase accumulated across the envelope support, against ``4 pi``.

    The envelope support maps to the position radius ``R = p_s z_sum / k``;
    the phase ``k R^2 / (2 z_sum)`` must exceed ``4 pi``.
    """
    if z_sum <= 0:
        return SaddleValidity(0.0, 4 * math.pi)
    radius_x = profile.support_radius * z_sum / k
    return SaddleValidity(k * radius_x**2 / (2.0 * z_sum), 4 * math.pi)


def phi_saddle(x, x_prime, profile: RadialProfile, z_sum: float, k: float) -> np.ndarray:
    """Stationary-phase wavefunction for a large total propagation distance.

    Returns ``f~(k (x - x') / z_sum) exp(i k |x - x'|^2 / (2 z_sum))``.  A
    :class:`SaddlePointWarning` is issued when ``z_sum`` is too short, but the
    value is still returned.
    """
    validity = saddle_validity(profile, z_sum, k)
    if not validity.ok:
        warnings.warn(
            f"saddle-point phase {validity.ratio:.3g} rad below {validity.threshold:.3g} rad",
            SaddlePointWarning,
            stacklevel=2,
        )
    d = np.asarray(x, dtype=float) - np.asarray(x_prime, dtype=float)
    return profile(k * d / z_sum) * np.exp(1j * k * _sq(d) / (2.0 * z_sum))
