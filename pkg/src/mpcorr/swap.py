"""Bob's two-photon state after Alice detects photons at ``(+a, 0)`` and ``(-a, 0)``.

Momentum eigenstates follow ``<x|p> ~ exp(-i p x)``.  A phase grating
``exp(i eps cos(k x + theta))`` then sends ``|p>`` to
``sum_n i^n J_n(eps) e^{i n theta} |p - n k>``.

Each of Bob's photons lives on a momentum ladder ``p_low + m k``.  The two
qubit momenta sit on rungs ``m = 0`` and ``m = 1``; for the photon near
``+l`` the upper rung is ``|0>``, for the photon near ``-l`` the lower rung
is ``|0>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import jv

from .model import DefocusParams, phi_defocused_position

DEFAULT_EPSILON = 0.5


@dataclass(frozen=True)
class ConditionalState:
    """Unnormalized two-photon amplitude ``phi(x1', x2')`` on Bob's plane."""

    a: float
    defocus: DefocusParams

    def __call__(self, x1p, x2p) -> np.ndarray:
        xa = np.array([self.a, 0.0])
        xb = np.array([-self.a, 0.0])
        d = self.defocus
        return phi_defocused_position(xa, x1p, d) * phi_defocused_position(xb, x2p, d) + phi_defocused_position(
            xb, x1p, d
        ) * phi_defocused_position(xa, x2p, d)


def conditional_state(a: float, defocus: DefocusParams) -> ConditionalState:
    if not math.isfinite(a):
        raise ValueError("a must be finite")
    return ConditionalState(float(a), defocus)


@dataclass(frozen=True)
class ValidityReport:
    """Margins of the approximations behind the two-qubit form.

    Every margin is a dimensionless ratio arranged so that larger is better;
    a margin of 10 means the condition holds by a factor of ten.
    """

    margins: dict
    degenerate: bool

    def ok(self, threshold: float = 10.0) -> bool:
        return all(m >= threshold for m in self.margins.values())

    @property
    def flags(self) -> dict:
        return {k: m >= 10.0 for k, m in self.margins.items()}


@dataclass(frozen=True)
class TwoQubitState:
    """Two-qubit momentum form of Bob's state.

    ``labels`` maps ``"++"``, ``"+-"``, ``"-+"``, ``"--"`` to
    ``s1 beta l / 2 + s2 beta a / 2``.  The window near ``+l`` holds
    ``|0> = -p'_{+-}`` and ``|1> = -p'_{++}``; the window near ``-l`` holds
    ``|0> = p'_{+-}`` and ``|1> = p'_{++}``.
    """

    a: float
    l: float
    beta: float
    amp0: complex
    amp1: complex
    global_phase: float

    def __post_init__(self):
        norm = math.sqrt(abs(self.amp0) ** 2 + abs(self.amp1) ** 2)
        if norm == 0:
            raise ValueError("zero state")
        object.__setattr__(self, "amp0", complex(self.amp0) / norm)
        object.__setattr__(self, "amp1", complex(self.amp1) / norm)

    @property
    def labels(self) -> dict:
        b, a, l = self.beta, self.a, self.l
        sign = {"+": 1.0, "-": -1.0}
        return {s1 + s2: sign[s1] * b * l / 2 + sign[s2] * b * a / 2 for s1 in "+-" for s2 in "+-"}

    @property
    def k_slm(self) -> float:
        return self.beta * self.a

    @property
    def relative_phase(self) -> float:
        """Unwrapped phase of ``amp1`` relative to ``amp0``, ``2 beta a l``."""
        return 2.0 * self.beta * self.a * self.l

    def amplitude_phase(self) -> float:
        """Phase of ``amp1 / amp0`` as stored, wrapped to ``(-pi, pi]``."""
        return float(np.angle(self.amp1 / self.amp0))

    def momenta(self) -> dict:
        """Qubit momenta per window: ``{"B": (p0, p1), "B'": (p0, p1)}``."""
        lab = self.labels
        return {"B": (-lab["+-"], -lab["++"]), "B'": (lab["+-"], lab["++"])}

    def vector(self) -> np.ndarray:
        """Amplitudes in the ``|00>, |01>, |10>, |11>`` basis."""
        return np.array([self.amp0, 0, 0, self.amp1], dtype=complex)

    def wavefunction(self, d1, y1, d2, y2) -> np.ndarray:
        """Position amplitude near the windows, ``x1' = l + d1``, ``x2' = -l + d2``.

        The ``y`` arguments are accepted for shape but do not enter.
        """
        p = self.momenta()
        d1 = np.asarray(d1, dtype=float)
        d2 = np.asarray(d2, dtype=float)
        shape = np.broadcast(d1, d2, np.asarray(y1), np.asarray(y2)).shape
        # <x|p> = exp(-i p x)
        psi = self.amp0 * np.exp(-1j * (p["B"][0] * d1 + p["B'"][0] * d2)) + self.amp1 * np.exp(
            -1j * (p["B"][1] * d1 + p["B'"][1] * d2)
        )
        return np.broadcast_to(np.exp(1j * self.global_phase) * psi, shape)


def qubit_approximation(a: float, l: float, delta: float, y_extent: float, defocus: DefocusParams):
    """Two-qubit form of the conditional state with the margins of its assumptions.

    Returns
    -------
    state : TwoQubitState
        ``amp0 = e^{-i beta a l}``, ``amp1 = e^{+i beta a l}`` (normalized) and the
        global phase ``beta (a^2 + l^2) / 2``.
    report : ValidityReport
    """
    if not (a > 0 and l > 0):
        raise ValueError("a and l must be positive")
    if not (delta > 0 and y_extent >= 0):
        raise ValueError("delta must be positive and y_extent non-negative")
    al, be = defocus.alpha, defocus.beta
    sizes = (a * a, a * l, l * l)
    inf = float("inf")
    margins = {
        "beta_over_alpha": be / al,
        "y_extent": 1.0 / (max(al, be) * y_extent**2) if y_extent > 0 else inf,
        "alpha_sizes": 1.0 / (al * max(sizes)),
        "beta_delta": 1.0 / (be * delta**2) if be > 0 else inf,
        "beta_sizes": be * min(sizes),
        "delta_over_l": l / delta,
    }
    phase = be * a * l
    state = TwoQubitState(
        a=float(a),
        l=float(l),
        beta=float(be),
        amp0=np.exp(-1j * phase),
        amp1=np.exp(1j * phase),
        global_phase=be * (a * a + l * l) / 2,
    )
    # the basis momenta differ by beta a; below one radian of relative phase they merge
    return state, ValidityReport(margins, degenerate=bool(phase < 0.5))


def window_overlap(
    state: TwoQubitState, exact: ConditionalState, delta: float, y_extent: float, n: int = 41, ny: int = 21
) -> float:
    """``|<qubit|exact>|^2`` with both restricted to ``|d| <= delta``, ``|y| <= y_extent``."""
    d = np.linspace(-delta, delta, n)
    y = np.linspace(-y_extent, y_extent, ny) if y_extent > 0 else np.zeros(1)
    D1, Y1, D2, Y2 = np.meshgrid(d, y, d, y, indexing="ij", sparse=True)
    x1 = np.stack(np.broadcast_arrays(state.l + D1, Y1), axis=-1)
    x2 = np.stack(np.broadcast_arrays(-state.l + D2, Y2), axis=-1)
    phi = exact(x1, x2)
    q = state.wavefunction(D1, Y1, D2, Y2)
    num = abs(np.vdot(q, phi)) ** 2
    return float(num / (np.vdot(q, q).real * np.vdot(phi, phi).real))


@dataclass(frozen=True)
class TomographySetting:
    """Sinusoidal phase grating ``eps cos(k x + theta)`` on one window."""

    epsilon: float = DEFAULT_EPSILON
    theta: float = 0.0
    k_slm: float = 1.0

    def __post_init__(self):
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be non-negative")
        if not self.k_slm > 0:
            raise ValueError("k_slm must be positive")


def jacobi_anger(epsilon: float, orders) -> np.ndarray:
    """Grating coefficients ``a_n = i^n J_n(epsilon)``."""
    n = np.asarray(orders)
    return (1j**n) * jv(n, epsilon)


@dataclass(frozen=True)
class LadderAmplitudes:
    """Amplitudes on the rungs ``m`` of a momentum ladder ``p0 + m k``."""

    rungs: np.ndarray
    amplitudes: np.ndarray
    truncation_mass: float

    def momenta(self, p0: float, k: float) -> np.ndarray:
        return p0 + self.rungs * k


def _transfer(setting: TomographySetting, order_cut: int) -> tuple[np.ndarray, np.ndarray]:
    # T[m_out, m_in] for inputs on rungs 0 and 1
    if order_cut < 1:
        raise ValueError("order_cut must be at least 1")
    rungs = np.arange(-order_cut, order_cut + 2)
    m_in = np.array([0, 1])
    n = m_in[None, :] - rungs[:, None]
    ok = np.abs(n) <= order_cut
    coef = jacobi_anger(setting.epsilon, n) * np.exp(1j * n * setting.theta)
    return rungs, np.where(ok, coef, 0.0)


def slm_transform(pair, setting: TomographySetting, order_cut: int = 8) -> LadderAmplitudes:
    """Apply the grating to amplitudes ``(c_p, c_{p+k})`` on rungs 0 and 1.

    Diffraction orders beyond ``|n| <= order_cut`` are dropped; the lost
    probability is reported as ``truncation_mass``.
    """
    c = np.asarray(pair, dtype=complex)
    if c.shape != (2,):
        raise ValueError("expected two amplitudes")
    rungs, T = _transfer(setting, order_cut)
    out = T @ c
    mass = float(np.sum(np.abs(c) ** 2) - np.sum(np.abs(out) ** 2))
    return LadderAmplitudes(rungs, out, mass)


@dataclass(frozen=True)
class ProbabilityTable:
    """Joint far-field spot probabilities ``P[i, j]`` for rungs ``rungs[i]`` (B) and ``rungs[j]`` (B')."""

    rungs: np.ndarray
    probs: np.ndarray
    truncation_mass: float
    settings: tuple

    def sub_table(self) -> np.ndarray:
        """Probabilities on the two qubit rungs of each window, ``[m_B, m_B']``."""
        i = np.searchsorted(self.rungs, [0, 1])
        return self.probs[np.ix_(i, i)]


# qubit index of each rung: B has |1> on rung 0, B' has |0> on rung 0
_RUNG_TO_QUBIT = {"B": (1, 0), "B'": (0, 1)}


def _ladder_state(psi: np.ndarray) -> np.ndarray:
    """Two-qubit vector or density matrix reordered to rung order ``[m_B, m_B']``."""
    qb, qbp = _RUNG_TO_QUBIT["B"], _RUNG_TO_QUBIT["B'"]
    perm = [2 * qb[mb] + qbp[mbp] for mb in (0, 1) for mbp in (0, 1)]
    if psi.ndim == 1:
        return psi[perm]
    return psi[np.ix_(perm, perm)]


def _as_density(state) -> np.ndarray:
    if isinstance(state, TwoQubitState):
        v = state.vector()
        return np.outer(v, v.conj())
    s = np.asarray(state, dtype=complex)
    if s.shape == (4,):
        return np.outer(s, s.conj())
    if s.shape == (4, 4):
        return s
    raise ValueError("state must be a TwoQubitState, a 4-vector or a 4x4 density matrix")


def far_field_probs(
    state, settings: tuple[TomographySetting, TomographySetting], order_cut: int = 8, k_slm: float | None = None
) -> ProbabilityTable:
    """Joint spot probabilities after each window's grating.

    ``state`` may be a :class:`TwoQubitState`, a 4-vector or a density matrix
    in the ``|00>, |01>, |10>, |11>`` basis.  For a :class:`TwoQubitState` the
    gratings must match its momentum spacing ``beta a``; for raw input pass
    ``k_slm`` to enforce the same check.
    """
    sb, sbp = settings
    expected = state.k_slm if isinstance(state, TwoQubitState) else k_slm
    if expected is not None:
        for s in (sb, sbp):
            if not math.isclose(s.k_slm, expected, rel_tol=1e-9):
                raise ValueError(f"grating wavenumber {s.k_slm} does not match ladder spacing {expected}")
    rho = _ladder_state(_as_density(state))
    rungs, TB = _transfer(sb, order_cut)
    _, TBp = _transfer(sbp, order_cut)
    T = np.kron(TB, TBp)
    out = T @ rho @ T.conj().T
    probs = np.clip(np.real(np.diag(out)), 0.0, None).reshape(len(rungs), len(rungs))
    mass = float(np.real(np.trace(rho)) - probs.sum())
    return ProbabilityTable(rungs, probs, mass, (sb, sbp))


def spot_projectors(setting: TomographySetting) -> np.ndarray:
    """Rows ``e_m`` with ``amplitude at rung m = e_m . (c_0, c_1)`` for ``m = 0, 1``."""
    _, T = _transfer(setting, 1)
    return T[1:3]  # rungs 0 and 1
