import itertools
import math

import numpy as np
import pytest

from mpcorr.correlator import FourPointGeometry, p4
from mpcorr.fringes import (
    fit_fringe_period,
    grid_geometry,
    normalized_cross_correlation,
    peak_spacing,
)
from mpcorr.maps import (
    COORDS,
    CorrelationGrid,
    MapConfig,
    correlation_map,
    read_pgm,
    select_pairs,
    window_pairs,
)
from mpcorr.model import DefocusParams, SourceParams

REFERENCE = SourceParams(200.0, 0.6, 14.7, 100.0, 100.0)


def test_window_pairs_counts():
    pairs, coords = window_pairs(3)
    assert len(pairs) == 9 * 8
    assert np.all(pairs[:, 0] != pairs[:, 1])
    assert set(coords[:, 0]) == {-2, -1, 0, 1, 2}
    assert np.abs(coords[:, 2:]).max() <= 1.0


@pytest.mark.parametrize(
    "kw",
    [
        dict(scan=("dxa", "dxa")),
        dict(scan=("dxa", "foo")),
        dict(fixed={"dya": 0.0}),
        dict(averaged=("cxa", "cya", "cxb")),
        dict(u_range=(3, -3)),
        dict(mode="sparse"),
        dict(normalization="sum"),
        dict(pitch_um=0.0),
    ],
)
def test_config_rejects_bad_partitions(kw):
    with pytest.raises(ValueError):
        MapConfig(**kw)


def test_config_shape():
    cfg = MapConfig(u_range=(-6, 6), v_range=(-2, 3))
    assert cfg.shape == (13, 6)
    assert MapConfig().shape == (7, 7)


def test_window_map_matches_direct_average():
    # brute force over all (Alice pair, Bob pair) tuples for one cell
    d = DefocusParams.from_alpha_beta(0.05, 0.3)
    cfg = MapConfig(window=3, u_range=(-2, 2), v_range=(-2, 2), pitch_um=2.0, normalization="raw")
    grid = correlation_map(cfg, d)
    pix = [(i, j) for i in range(3) for j in range(3)]
    for u, v in [(1, -1), (2, 2), (0, 1)]:  # (0, 1) needs coincident Alice pixels
        vals = []
        for a1, a2, b1, b2 in itertools.product(pix, repeat=4):
            if a1 == a2 or b1 == b2:
                continue
            if (a1[0] - a2[0], a1[1] - a2[1]) != (u, 0) or (b1[0] - b2[0], b1[1] - b2[1]) != (v, 0):
                continue
            g = FourPointGeometry(np.array(a1) * 2.0, np.array(a2) * 2.0, np.array(b1) * 2.0, np.array(b2) * 2.0)
            vals.append(p4(g, d))
        i, j = u + 2, v + 2
        if vals:
            assert grid.values[i, j] == pytest.approx(np.mean(vals), rel=1e-12)
            assert grid.count[i, j] == len(vals)
        else:
            assert np.isnan(grid.values[i, j])


def test_selection_cells_cover_grid():
    cfg = MapConfig(window=5, u_range=(-4, 4), v_range=(-4, 4))
    sel = select_pairs(cfg)
    cells = sel.tuple_cells()
    assert cells.shape == (len(sel.pairs[0]), len(sel.pairs[1]))
    assert cells.max() < 81
    # (0, 0) offsets need coincident pixels along x with dy = 0
    assert not np.any(cells == 4 * 9 + 4)


def test_lattice_map_single_point():
    d = REFERENCE.defocus()
    cfg = MapConfig(mode="lattice", avg_halfwidth=0, normalization="raw", fixed={"dya": 1, "dyb": -1})
    grid = correlation_map(cfg, d)
    p = cfg.pitch_um
    u, v = 2, -3
    g = FourPointGeometry(np.array([u, 1]) * p / 2, -np.array([u, 1]) * p / 2, np.array([v, -1]) * p / 2, -np.array([v, -1]) * p / 2)
    assert grid.values[u + 3, v + 3] == pytest.approx(float(p4(g, d)), rel=1e-13)
    assert np.all(grid.count == 1)


def test_zero_beta_map_has_no_fringes():
    d = DefocusParams.from_alpha_beta(0.01, 0.0)
    cfg = MapConfig(mode="lattice", avg_halfwidth=0, u_range=(-30, 30), v_range=(10, 10), pitch_um=1.0)
    row = correlation_map(cfg, d).values[:, 0]
    # cosh + 1 under a Gaussian: one central maximum, no oscillation
    assert np.argmax(row) == 30
    assert np.all(np.diff(row[30:]) < 0)


def test_normalization_and_raw():
    d = REFERENCE.defocus()
    raw = correlation_map(MapConfig(normalization="raw"), d)
    norm = correlation_map(MapConfig(), d)
    assert np.nanmax(norm.values) == 1.0
    np.testing.assert_allclose(norm.values, raw.values / np.nanmax(raw.values), rtol=1e-15)
    assert norm.normalization == "max" and raw.normalization == "raw"


def test_csv_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(3, 4)) * 1e-7
    vals[1, 2] = np.nan
    g = CorrelationGrid("dxa", "dyb", [-1, 0, 1], [0, 1, 2, 3], 2.7, vals, error=np.abs(vals), meta={"mode": "window", "x": [1, 2]})
    path = g.to_csv(tmp_path / "g.csv")
    back = CorrelationGrid.from_csv(path)
    assert back.same_axes(g)
    np.testing.assert_array_equal(back.values, g.values)
    np.testing.assert_array_equal(back.error, g.error)
    assert back.count is None
    assert back.meta == g.meta
    back.to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_bytes() == path.read_bytes()


def test_pgm_layout(tmp_path):
    vals = np.array([[0.0, 1.0, 0.5], [np.nan, 0.25, -1.0]])
    g = CorrelationGrid("dxa", "dxb", [0, 1], [0, 1, 2], 1.0, vals)
    img = read_pgm(g.to_pgm(tmp_path / "g.pgm"))
    assert img.shape == (2, 3)
    assert img.tolist() == [[0, 255, 128], [0, 64, 0]]


def test_grid_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        CorrelationGrid("dxa", "dxb", [0, 1], [0], 1.0, np.zeros((1, 2)))


def test_cross_correlation_properties():
    d = REFERENCE.defocus()
    g = correlation_map(MapConfig(u_range=(-6, 6), v_range=(-6, 6), fixed={"dya": 1, "dyb": 1}), d)
    assert normalized_cross_correlation(g, g) == pytest.approx(1.0)
    scaled = CorrelationGrid(g.u_name, g.v_name, g.u_px, g.v_px, g.pitch_um, 3 * g.values, meta=g.meta)
    assert normalized_cross_correlation(g, scaled) == pytest.approx(1.0)
    other = CorrelationGrid("dxa", "dyb", g.u_px, g.v_px, g.pitch_um, g.values)
    with pytest.raises(ValueError):
        normalized_cross_correlation(g, other)


def test_grid_geometry():
    g = CorrelationGrid("dxa", "dxb", [1, 2], [3], 2.0, np.ones((2, 1)), meta={"fixed": {"dya": 1, "dyb": -2}})
    S, Q = grid_geometry(g)
    np.testing.assert_allclose(S[:, 0], [(3 - 2) * 4, (6 - 2) * 4])
    np.testing.assert_allclose(Q[:, 0], [(1 + 1 + 9 + 4) * 4, (4 + 1 + 9 + 4) * 4])
    bad = CorrelationGrid("cxa", "dxb", [1], [3], 2.0, np.ones((1, 1)), meta={"fixed": {"dya": 1, "dyb": 1}})
    with pytest.raises(ValueError):
        grid_geometry(bad)


@pytest.mark.parametrize("mode", ["window", "lattice"])
def test_fringe_fit_recovers_period(mode):
    d = REFERENCE.defocus()
    cfg = MapConfig(u_range=(-6, 6), v_range=(-6, 6), fixed={"dya": 1, "dyb": 1}, mode=mode, avg_halfwidth=2)
    fit = fit_fringe_period(correlation_map(cfg, d))
    assert fit.success
    assert fit.period == pytest.approx(4 * math.pi / d.beta, rel=1e-6)
    assert fit.gamma == pytest.approx(d.alpha / 4, rel=1e-5)


def test_row_maxima_spacing_at_large_defocus():
    d = SourceParams(1e4, 1.0, 10.0, 400.0, 400.0).defocus()
    cfg = MapConfig(mode="lattice", avg_halfwidth=0, u_range=(-120, 120), v_range=(30, 30), pitch_um=1.0)
    g = correlation_map(cfg, d)
    S, _ = grid_geometry(g)
    assert peak_spacing(S[:, 0], g.values[:, 0]) == pytest.approx(4 * math.pi / d.beta, rel=0.01)


def test_all_coordinates_used_once():
    cfg = MapConfig()
    assert sorted(list(cfg.scan) + list(cfg.fixed) + list(cfg.averaged)) == sorted(COORDS)
