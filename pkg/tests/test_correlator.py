import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mpcorr.correlator import (
    FourPointGeometry,
    p2,
    p2n,
    p2n_terms,
    p4,
    p4_saddle,
    permutation_sum,
)
from mpcorr.model import DefocusParams, RadialProfile, SaddlePointWarning, SourceParams, phi_defocused_position
from mpcorr.permanent import DetectionPattern, joint_probability, wavefunction_matrix

coord = st.floats(-8, 8)
point = st.tuples(coord, coord)
ab = st.tuples(st.floats(0.01, 1.0), st.floats(0.0, 2.0))


def _perm2(geom, d):
    return joint_probability(geom.pattern(), lambda x, y: phi_defocused_position(x, y, d))


def test_p2_examples():
    d = DefocusParams.from_alpha_beta(0.5, 3.0)
    assert p2([1, 1], [1, 1], d) == 1
    assert p2([2, 0], [0, 0], d) == pytest.approx(math.exp(-1.0))
    assert p2([2, 0], [0, 0], DefocusParams.from_alpha_beta(0.5, 0.0)) == pytest.approx(p2([2, 0], [0, 0], d), rel=1e-14)


def test_geometry_quantities():
    g = FourPointGeometry([1, 0], [-1, 0], [0, 1], [0, -1])
    assert g.D == 8 and g.D_n == 4 and g.S == 0
    g = FourPointGeometry([1, 0], [-1, 0], [1, 0], [-1, 0])
    assert g.S == 4 and g.D == 8
    assert g.swapped_alice().S == -4
    with pytest.raises(ValueError):
        FourPointGeometry([1, 0, 0], [0, 0], [0, 0], [0, 0])


def test_p4_all_points_equal():
    d = DefocusParams.from_alpha_beta(0.2, 0.7)
    assert p4(FourPointGeometry([3, 1], [3, 1], [3, 1], [3, 1]), d) == 2.0


@given(point, point, point, point, ab)
def test_p4_is_half_the_permanent(a, b, c, e, alpha_beta):
    d = DefocusParams.from_alpha_beta(*alpha_beta)
    g = FourPointGeometry(a, b, c, e)
    ref = _perm2(g, d)
    val = p4(g, d)
    # the closed form is judged against the size of its summands; the permanent
    # carries a rounding error set by the product of absolute column sums
    scale = np.exp(-d.alpha * g.D / 4) * (np.cosh(d.alpha * g.S / 2) + 1)
    m = np.abs(wavefunction_matrix(g.pattern(), lambda x, y: phi_defocused_position(x, y, d)))
    glynn = np.prod(m.sum(axis=0)) * np.sqrt(ref)
    assert abs(val - ref / 2) <= 1e-10 * scale + 1e-13 * glynn


@given(point, point, point, point, ab)
def test_p4_symmetric_under_relabelling(a, b, c, e, alpha_beta):
    d = DefocusParams.from_alpha_beta(*alpha_beta)
    g = FourPointGeometry(a, b, c, e)
    ref = p4(g, d)
    assert p4(g.swapped_alice(), d) == pytest.approx(ref, rel=1e-12, abs=1e-300)
    assert p4(FourPointGeometry(c, e, a, b), d) == pytest.approx(ref, rel=1e-12, abs=1e-300)


def test_p4_blind_to_beta_without_interference():
    g = FourPointGeometry([1, 0], [-1, 0], [0, 1], [0, -1])  # S = 0
    vals = [p4(g, DefocusParams.from_alpha_beta(0.3, b)) for b in (0.0, 0.4, 2.0)]
    assert vals[0] == vals[1] == vals[2]


def test_permutation_sum_counts_and_zero_mean():
    rng = np.random.default_rng(2)
    for n, m in ((1, 1), (2, 3), (3, 21), (4, 300)):
        pat = DetectionPattern(rng.normal(size=(n, 2)), rng.normal(size=(n, 2)))
        ps = permutation_sum(pat)
        assert ps.term_count == m
        assert abs(ps.S.sum()) < 1e-10
        d = DefocusParams.from_alpha_beta(0.1, 0.2)
        assert len(p2n_terms(pat, d)) == m


@given(st.integers(1, 4), st.integers(0, 2**31), ab)
def test_p2n_matches_permanent(n, seed, alpha_beta):
    rng = np.random.default_rng(seed)
    pat = DetectionPattern(rng.uniform(-4, 4, (n, 2)), rng.uniform(-4, 4, (n, 2)))
    d = DefocusParams.from_alpha_beta(*alpha_beta)
    wf = lambda x, y: phi_defocused_position(x, y, d)
    ref = joint_probability(pat, wf)
    glynn = np.prod(np.abs(wavefunction_matrix(pat, wf)).sum(axis=0)) * np.sqrt(ref)
    terms = np.abs(p2n_terms(pat, d)).sum() * np.exp(-d.alpha * permutation_sum(pat).D_n / 2)
    assert abs(p2n(pat, d) - ref) <= 1e-9 * terms + 1e-12 * glynn


def test_p2n_reduces_to_twice_p4():
    d = DefocusParams.from_alpha_beta(0.15, 0.6)
    g = FourPointGeometry([0.3, 1.0], [-2.0, 0.5], [1.1, -0.4], [0.0, 2.2])
    assert p2n(g.pattern(), d) == pytest.approx(2 * p4(g, d), rel=1e-12)


def test_p2n_guard():
    pat = DetectionPattern(np.arange(14.0).reshape(7, 2), np.arange(14.0).reshape(7, 2))
    with pytest.raises(ValueError):
        p2n(pat, DefocusParams.from_alpha_beta(0.1, 0.1))


def test_saddle_warning_and_limits():
    prof = RadialProfile.gaussian(1.0)
    g = FourPointGeometry([1, 0], [-1, 0], [1, 0], [-1, 0])
    with pytest.warns(SaddlePointWarning):
        p4_saddle(g, prof, 1.0, 10.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        same = FourPointGeometry([0, 0], [0, 0], [0, 0], [0, 0])
        assert p4_saddle(same, prof, 400.0, 10.0) == pytest.approx(4.0)


def _line_geometry(S):
    r = np.sqrt(S)
    z0 = np.zeros_like(r)
    x1 = np.stack([r / 2, z0], axis=1)
    return FourPointGeometry(x1, -x1, x1, -x1)


def test_saddle_fringe_frequency_approaches_exact():
    # compare peak positions along a line where S grows and D = 2 S
    from mpcorr.fringes import peak_positions

    b, k = 1.0, 10.0
    errs = []
    for Z in (5, 10, 20, 40):
        zs = 2 * k * Z / b**2
        d = SourceParams(1e6, b, k, z=zs / 2, z_prime=zs / 2).defocus()
        S = np.linspace(0, 4 / d.alpha, 40001)
        g = _line_geometry(S)
        pa = peak_positions(S, p4(g, d))
        ps = peak_positions(S, p4_saddle(g, RadialProfile.gaussian(b), zs, k))
        assert len(pa) == len(ps) >= 1
        errs.append(np.max(np.abs(pa - ps)) / (4 * np.pi / d.beta))
    assert errs[2] <= 0.03
    assert all(e1 > e2 for e1, e2 in zip(errs, errs[1:]))
