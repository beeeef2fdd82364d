"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric guard,
4 insufficient statistics.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config
from .fringes import fit_fringe_period, normalized_cross_correlation
from .maps import CorrelationGrid, correlation_map
from .permanent import MAX_ORDER, PARTITIONS, PermanentOrderError, permanent, permanent_naive
from .stochastic import (
    DEFAULT_CHUNK_SHOTS,
    DEFAULT_MIN_SHOTS,
    ESTIMATOR_VERSION,
    CheckpointMismatch,
    G4Accumulator,
    InsufficientStatistics,
    StochasticSetup,
    genuine_g4,
    run_stochastic,
)
from .swap import conditional_state, far_field_probs, qubit_approximation, window_overlap
from .tomography import RankDeficientSettings, reconstruct, tomography_settings

log = logging.getLogger("mpcorr")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_STATS = 0, 2, 3, 4
ORACLE_MAX_N = 7


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, name: str, payload: dict, files: list[Path]) -> Path:
    """Atomically write ``<name>.manifest.json`` listing every output with its checksum."""
    payload = dict(payload)
    payload["tool"] = "mpcorr"
    payload["version"] = __version__
    payload["outputs"] = [
        {"path": f.name, "sha256": sha256_file(f), "bytes": f.stat().st_size} for f in sorted(files)
    ]
    path = out / f"{name}.manifest.json"
    tmp = out / f".{name}.manifest.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def _write_grid(grid: CorrelationGrid, out: Path, stem: str, title: str) -> list[Path]:
    from .plotting import plot_grid

    csv_path = grid.to_csv(out / f"{stem}.csv")
    pgm_path = grid.to_pgm(out / f"{stem}.pgm")
    png_path = out / f"{stem}.png"
    plot_grid(grid, png_path, title)
    return [csv_path, pgm_path, png_path]


# -- subcommands ------------------------------------------------------------


def run_analytic_map(cfg: RunConfig, out: Path, args=None) -> tuple[list[Path], dict]:
    defocus = cfg.source.defocus()
    grid = correlation_map(cfg.map, defocus)
    files = _write_grid(grid, out, "analytic_map", "analytic P4")
    extra = {"alpha": defocus.alpha, "beta": defocus.beta, "Z": defocus.Z, "fringe_period_um2": _period(defocus.beta)}
    return files, extra


def _period(beta: float):
    return 4 * math.pi / beta if beta > 0 else None


def _setup(cfg: RunConfig, args) -> StochasticSetup:
    exp = cfg.experiment
    n_shots = args.shots if getattr(args, "shots", None) else exp.get("n_shots", 50_000)
    try:
        return StochasticSetup(
            source=cfg.source,
            grid=cfg.grid,
            map_config=cfg.map,
            gain_peak=exp.get("gain_peak", 0.6),
            n_shots=n_shots,
            chunk_shots=exp.get("chunk_shots", DEFAULT_CHUNK_SHOTS),
            seed=cfg.seed,
        )
    except ValueError as exc:
        raise ConfigError(f"experiment: {exc}") from None


def run_stochastic_cmd(cfg: RunConfig, out: Path, args) -> tuple[list[Path], dict]:
    setup = _setup(cfg, args)
    min_shots = cfg.experiment.get("min_shots", DEFAULT_MIN_SHOTS)
    if setup.n_shots < min_shots:
        raise InsufficientStatistics(f"n_shots {setup.n_shots} below min_shots {min_shots}")
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "stochastic.ckpt.npz"
    acc = None
    if ckpt.exists():
        acc = G4Accumulator.load(ckpt, setup.map_config, setup.config_hash())
        log.info("resuming from %s with %d shots", ckpt, acc.shots)

    def save(a):
        a.save(ckpt)

    acc = run_stochastic(setup, workers=args.workers, acc=acc, stop_after_shots=args.stop_after_shots, on_chunk=save)
    acc.save(ckpt)
    extra = {
        "n_shots": setup.n_shots,
        "shots_done": acc.shots,
        "chunk_shots": setup.chunk_shots,
        "config_hash": setup.config_hash(),
        "estimator": ESTIMATOR_VERSION,
        "complete": acc.shots == setup.n_shots,
    }
    files = [ckpt]
    if acc.shots < setup.n_shots:
        log.info("stopped after %d of %d shots; checkpoint %s", acc.shots, setup.n_shots, ckpt)
        return files, extra
    grid = genuine_g4(acc, min_shots=min_shots)
    if grid.meta.get("low_statistics"):
        log.warning("low statistics: error grid unavailable")
    files += _write_grid(grid, out, "stochastic_g4", "genuine G4")
    extra["low_statistics"] = grid.meta.get("low_statistics")
    return files, extra


def run_compare(cfg: RunConfig, out: Path, args) -> tuple[list[Path], dict]:
    from .plotting import plot_compare

    a = CorrelationGrid.from_csv(args.grid_a)
    b = CorrelationGrid.from_csv(args.grid_b)
    if not a.same_axes(b):
        raise ConfigError("compare: grids do not share axes")
    report = {
        "grid_a": str(args.grid_a),
        "grid_b": str(args.grid_b),
        "ncc": normalized_cross_correlation(a, b),
    }
    for key, g in (("a", a), ("b", b)):
        try:
            fit = fit_fringe_period(g)
            report[f"period_{key}_um2"] = fit.period
        except (ValueError, RuntimeError) as exc:
            log.warning("fringe fit failed for grid %s: %s", key, exc)
            report[f"period_{key}_um2"] = None
    if cfg.source is not None:
        report["expected_period_um2"] = _period(cfg.source.defocus().beta)
    rpt = out / "compare_report.json"
    rpt.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    table = out / "compare.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k in sorted(report):
            if k.startswith("grid_"):
                continue
            w.writerow([k, "" if report[k] is None else repr(float(report[k]))])
    fig = out / "compare.png"
    plot_compare(a, b, fig, titles=(Path(args.grid_a).stem, Path(args.grid_b).stem))
    return [rpt, table, fig], report


def run_swap_demo(cfg: RunConfig, out: Path, args) -> tuple[list[Path], dict]:
    from .plotting import plot_density

    exp = cfg.experiment
    defocus = cfg.source.defocus()
    a, l = exp.get("a_um", 45.0), exp.get("l_um", 45.0)
    delta, y = exp.get("delta_um", 4.4), exp.get("y_um", 4.4)
    eps = exp.get("epsilon", 0.5)
    thetas = exp.get("thetas_rad", [0.0, math.pi / 2, math.pi])
    cut = exp.get("order_cut", 8)
    state, report = qubit_approximation(a, l, delta, y, defocus)
    settings = tomography_settings(state.k_slm, eps, thetas)
    tables = [far_field_probs(state, s, order_cut=cut) for s in settings]
    rec = reconstruct(tables, state.vector())
    overlap = window_overlap(state, conditional_state(a, defocus), delta, y)

    prob_path = out / "swap_probabilities.csv"
    with open(prob_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "epsilon_B", "theta_B", "epsilon_Bp", "theta_Bp", "rung_B", "rung_Bp", "probability"])
        for i, t in enumerate(tables):
            sb, sbp = t.settings
            for ib, mb in enumerate(t.rungs):
                for jb, mbp in enumerate(t.rungs):
                    w.writerow([i, repr(sb.epsilon), repr(sb.theta), repr(sbp.epsilon), repr(sbp.theta), mb, mbp, repr(float(t.probs[ib, jb]))])
    rho_path = out / "swap_density.csv"
    with open(rho_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "real", "imag"])
        for i in range(4):
            for j in range(4):
                w.writerow([i, j, repr(float(rec.rho[i, j].real)), repr(float(rec.rho[i, j].imag))])
    summary = {
        "fidelity": rec.fidelity,
        "concurrence": rec.concurrence,
        "lsq_residual": rec.residual,
        "relative_phase_rad": state.relative_phase,
        "k_slm_inv_um": state.k_slm,
        "window_overlap": overlap,
        "margins": report.margins,
        "all_margins_ge_10": report.ok(),
        "degenerate": report.degenerate,
        "max_truncation_mass": max(t.truncation_mass for t in tables),
    }
    sum_path = out / "swap_summary.json"
    sum_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    fig = out / "swap_density.png"
    plot_density(rec.rho, fig)
    return [prob_path, rho_path, sum_path, fig], {"fidelity": rec.fidelity, "concurrence": rec.concurrence}


def perm_bench(n_max: int, seed: int = 0, repeats: int = 3) -> list[dict]:
    """Time the Gray-code permanent (and enumeration up to n = 7) on random matrices."""
    if not 1 <= n_max <= MAX_ORDER:
        raise PermanentOrderError(f"n_max must lie in [1, {MAX_ORDER}]")
    rng = np.random.default_rng(seed)
    permanent(np.ones((2, 2)))  # compile before timing
    rows = []
    for n in range(1, n_max + 1):
        m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            val = permanent(m)
            best = min(best, time.perf_counter() - t0)
        row = {"n": n, "algorithm": "glynn-gray", "seconds": best, "oracle_seconds": math.nan, "max_rel_diff": math.nan}
        if n <= ORACLE_MAX_N:
            t0 = time.perf_counter()
            ref = permanent_naive(m)
            row["oracle_seconds"] = time.perf_counter() - t0
            row["max_rel_diff"] = abs(val - ref) / abs(ref)
        rows.append(row)
    for prev, cur in zip(rows, rows[1:]):
        if cur["seconds"] < prev["seconds"]:
            log.warning("timing not monotone at n=%d (%.3g s < %.3g s)", cur["n"], cur["seconds"], prev["seconds"])
    return rows


def run_perm_bench(cfg: RunConfig, out: Path, args) -> tuple[list[Path], dict]:
    from .plotting import plot_bench

    n_max = args.n_max if args.n_max is not None else cfg.experiment.get("n_max", 10)
    rows = perm_bench(n_max, seed=cfg.seed, repeats=cfg.experiment.get("repeats", 3))
    path = out / "perm_bench.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "algorithm", "seconds", "oracle_seconds", "max_rel_diff"])
        for r in rows:
            w.writerow([r["n"], r["algorithm"], repr(r["seconds"]), repr(r["oracle_seconds"]), repr(r["max_rel_diff"])])
    fig = out / "perm_bench.png"
    plot_bench(rows, fig)
    return [path, fig], {"n_max": n_max, "partitions": PARTITIONS}


COMMANDS = {
    "analytic-map": run_analytic_map,
    "stochastic-run": run_stochastic_cmd,
    "compare": run_compare,
    "swap-demo": run_swap_demo,
    "perm-bench": run_perm_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="INI configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="mpcorr", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"mpcorr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("analytic-map", parents=[common], help="averaged closed-form four-photon map")
    s = sub.add_parser("stochastic-run", parents=[common], help="stochastic field simulation")
    s.add_argument("--shots", type=int, help="override experiment.n_shots")
    s.add_argument("--checkpoint", type=Path, help="checkpoint file (default <out>/stochastic.ckpt.npz)")
    s.add_argument("--stop-after-shots", type=int, help="stop once this many shots are done")
    c = sub.add_parser("compare", parents=[common], help="compare two grid CSV files")
    c.add_argument("grid_a", type=Path)
    c.add_argument("grid_b", type=Path)
    sub.add_parser("swap-demo", parents=[common], help="two-qubit state and tomography loop")
    b = sub.add_parser("perm-bench", parents=[common], help="permanent timing table")
    b.add_argument("--n-max", type=int, default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, default in (("config", None), ("seed", None), ("out", Path(".")), ("workers", os.cpu_count() or 1), ("verbose", False)):
        if not hasattr(args, key):
            setattr(args, key, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cmd = args.command
    try:
        cfg = load_config(args.config, cmd) if args.config else parse_config("", cmd)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed: must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.workers < 1:
            raise ConfigError("--workers: must be at least 1")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        files, extra = COMMANDS[cmd](cfg, out, args)
        wall = time.time() - t0
        manifest = {
            "subcommand": cmd,
            "config": cfg.echo(),
            "workers": args.workers,
            "started_unix": t0,
            "wall_seconds": wall,
            "result": extra,
        }
        path = write_manifest(out, cmd.replace("-", "_"), manifest, files)
        log.info("wrote %s", path)
        return EXIT_OK
    except (ConfigError, CheckpointMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientStatistics as exc:
        print(f"insufficient statistics: {exc}", file=sys.stderr)
        return EXIT_STATS
    except (PermanentOrderError, RankDeficientSettings, FloatingPointError, ValueError) as exc:
        print(f"numeric guard: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
