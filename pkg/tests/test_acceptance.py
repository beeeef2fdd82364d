"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from mpcorr.cli import main
from mpcorr.config import load_config
from mpcorr.correlator import FourPointGeometry, p2n, p4, p4_saddle
from mpcorr.fringes import fit_fringe_period, grid_geometry, normalized_cross_correlation, peak_positions, peak_spacing
from mpcorr.maps import CorrelationGrid, MapConfig, correlation_map
from mpcorr.model import DefocusParams, RadialProfile, SourceParams, phi_defocused_position
from mpcorr.permanent import DetectionPattern, joint_probability, permanent, permanent_naive
from mpcorr.stochastic import genuine_g4
from mpcorr.swap import (
    conditional_state,
    far_field_probs,
    jacobi_anger,
    qubit_approximation,
    window_overlap,
)
from mpcorr.tomography import reconstruct, tomography_settings

from oracles import SyntheticGaussianState, bessel_series
from test_stochastic import _cell_target, _synthetic_acc

ROOT = Path(__file__).resolve().parents[1]


def test_1_permanent_matches_enumeration(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(200):
        n = 2 + i % 6
        m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        ref = permanent_naive(m)
        worst = max(worst, abs(permanent(m) - ref) / abs(ref))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10
    criterion(1, ok, f"max rel diff {worst:.2e} (<= 1e-12), {elapsed:.2f} s (< 10 s)")
    assert ok


def _ab_pairs(rng):
    return list(zip(np.geomspace(0.01, 0.5, 10), rng.uniform(0.05, 1.0, 10)))


def test_2_closed_forms_match_permanents(criterion):
    rng = np.random.default_rng(7)
    pairs = _ab_pairs(rng)
    geoms = rng.normal(size=(200, 4, 2))
    r4 = []
    for al, be in pairs:
        d = DefocusParams.from_alpha_beta(al, be)
        wf = lambda x, y: phi_defocused_position(x, y, d)
        for pts in geoms / math.sqrt(al):
            g = FourPointGeometry(*pts)
            r4.append(p4(g, d) / joint_probability(g.pattern(), wf))
    r4 = np.array(r4)
    spread4 = np.ptp(r4) / np.mean(r4)
    r6 = []
    for al, be in pairs:
        d = DefocusParams.from_alpha_beta(al, be)
        wf = lambda x, y: phi_defocused_position(x, y, d)
        for _ in range(20):
            pat = DetectionPattern(*(rng.normal(size=(2, 3, 2)) / math.sqrt(al)))
            r6.append(p2n(pat, d) / joint_probability(pat, wf))
    r6 = np.array(r6)
    spread6 = np.ptp(r6) / np.mean(r6)
    ok = spread4 < 1e-10 and spread6 < 1e-9
    criterion(
        2,
        ok,
        f"p4 ratio {np.mean(r4):.12f} spread {spread4:.1e} (< 1e-10); n=3 ratio {np.mean(r6):.12f} spread {spread6:.1e} (< 1e-9)",
    )
    assert ok


def test_3_fringe_period_in_map(criterion):
    # a row of the map at fixed Bob separation; S grows linearly along it
    d = SourceParams(1e4, 1.0, 10.0, 400.0, 400.0).defocus()
    cfg = MapConfig(mode="lattice", avg_halfwidth=0, u_range=(-120, 120), v_range=(30, 30), pitch_um=1.0)
    g = correlation_map(cfg, d)
    S, _ = grid_geometry(g)
    spacing = peak_spacing(S[:, 0], g.values[:, 0])
    n_peaks = len(peak_positions(S[:, 0], g.values[:, 0]))
    expected = 4 * math.pi / d.beta
    rel = abs(spacing / expected - 1)
    ok = rel <= 0.01
    criterion(3, ok, f"Z={d.Z:g}: {n_peaks} maxima, spacing {spacing:.2f} vs 4pi/beta {expected:.2f} um^2 ({rel:.2%}, <= 1%)")
    assert ok


def test_4_saddle_point_robustness(criterion):
    b, k = 1.0, 10.0
    mism = {}
    for Z in (5, 10, 20, 40):
        zs = 2 * k * Z / b**2
        d = SourceParams(1e6, b, k, z=zs / 2, z_prime=zs / 2).defocus()
        S = np.linspace(0, 4 / d.alpha, 40001)
        r = np.sqrt(S)
        x1 = np.stack([r / 2, 0 * r], axis=1)
        g = FourPointGeometry(x1, -x1, x1, -x1)
        pa = peak_positions(S, p4(g, d))
        ps = peak_positions(S, p4_saddle(g, RadialProfile.gaussian(b), zs, k))
        assert len(pa) == len(ps)
        mism[Z] = float(np.max(np.abs(pa - ps)) / (4 * math.pi / d.beta))
    vals = list(mism.values())
    monotone = all(x > y for x, y in zip(vals, vals[1:]))
    ok = mism[20] <= 0.03 and monotone
    text = ", ".join(f"Z={z}: {v:.2%}" for z, v in mism.items())
    criterion(4, ok, f"peak mismatch per period {text} (Z=20 <= 3%, decreasing: {monotone})")
    assert ok


def _grid_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name.startswith("stochastic_g4")}


@pytest.fixture(scope="module")
def reference_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("reference")
    cfg = ROOT / "configs" / "reference.ini"
    t0 = time.perf_counter()
    code = main(["stochastic-run", "--config", str(cfg), "--out", str(out), "--workers", str(os.cpu_count() or 1)])
    elapsed = time.perf_counter() - t0
    assert main(["analytic-map", "--config", str(cfg), "--out", str(out)]) == 0
    return code, out, elapsed, load_config(cfg, "stochastic-run")


def test_5_stochastic_reproduction(criterion, reference_run):
    code, out, elapsed, cfg = reference_run
    assert code == 0
    stoch = CorrelationGrid.from_csv(out / "stochastic_g4.csv")
    ana = CorrelationGrid.from_csv(out / "analytic_map.csv")
    ncc = normalized_cross_correlation(stoch, ana)
    fit = fit_fringe_period(stoch)
    expected = 4 * math.pi / cfg.source.defocus().beta
    rel = abs(fit.period / expected - 1)
    ok = ncc >= 0.9 and rel <= 0.10
    criterion(
        5,
        ok,
        f"{stoch.meta['shots']} shots in {elapsed:.0f} s: NCC {ncc:.3f} (>= 0.9), "
        f"period {fit.period:.2f} vs {expected:.2f} um^2 ({rel:.1%}, <= 10%)",
    )
    assert ok


def test_6_wick_oracle(criterion):
    state = SyntheticGaussianState(3, seed=0)
    acc = _synthetic_acc(state, 64, 4000)
    grid = genuine_g4(acc)
    z = (grid.values - _cell_target(state, acc)) / grid.error
    worst = float(np.max(np.abs(z)))
    ok = bool(np.all(np.isfinite(z))) and worst < 3.0
    criterion(6, ok, f"{z.size} cells, max |deviation| {worst:.2f} sigma (< 3), rms {math.sqrt(np.mean(z**2)):.2f}")
    assert ok


def test_7_swap_qubit_state(criterion):
    src = SourceParams(1e4, 1.0, 10.0, 2000.0, 2000.0)
    d = src.defocus()
    a = l = 45.0
    delta = y = 4.4
    state, report = qubit_approximation(a, l, delta, y, d)
    exact_phase = state.relative_phase == 2 * d.beta * a * l
    overlap = window_overlap(state, conditional_state(a, d), delta, y)
    ok = exact_phase and report.ok(10.0) and overlap >= 0.95
    criterion(
        7,
        ok,
        f"phase == 2 beta a l: {exact_phase}; min margin {min(report.margins.values()):.1f} (>= 10); overlap {overlap:.4f} (>= 0.95)",
    )
    assert ok


def test_8_tomography_loop(criterion):
    src = SourceParams(1e4, 1.0, 10.0, 2000.0, 2000.0)
    state, _ = qubit_approximation(45.0, 45.0, 4.4, 4.4, src.defocus())
    tables = [far_field_probs(state, s) for s in tomography_settings(state.k_slm)]
    rec = reconstruct(tables, target=state.vector())
    orders = np.arange(-10, 11)
    worst = 0.0
    for eps in np.linspace(0.0, 3.0, 31):
        ref = np.array([(1j**n) * bessel_series(int(n), eps) for n in orders])
        worst = max(worst, float(np.max(np.abs(jacobi_anger(eps, orders) - ref))))
    ok = rec.fidelity >= 0.999 and rec.concurrence >= 0.99 and worst <= 1e-10
    criterion(
        8,
        ok,
        f"fidelity {rec.fidelity:.6f} (>= 0.999), concurrence {rec.concurrence:.6f} (>= 0.99), Bessel diff {worst:.1e} (<= 1e-10)",
    )
    assert ok


def test_9_worker_count_determinism(criterion, tmp_path):
    cfg = ROOT / "configs" / "reference.ini"
    outs = []
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        assert main(["stochastic-run", "--config", str(cfg), "--shots", "4000", "--workers", str(workers), "--out", str(out)]) == 0
        outs.append(_grid_bytes(out))
    ok = outs[0] == outs[1] and "stochastic_g4.csv" in outs[0]
    criterion(9, ok, f"workers 1 vs 2, 4000 shots: {len(outs[0])} data files identical: {outs[0] == outs[1]}")
    assert ok
