"""INI run configuration with strict key checking.

Sections and keys (units in the key names)::

    [source]      w0_um, b_inv_um, k_inv_um, z_um, zprime_um
    [grid]        n_pixels, pitch_um, window
    [map]         scan, u_range, v_range, fixed, averaged, mode,
                  avg_halfwidth, normalization
    [experiment]  seed plus subcommand keys (any known key is accepted)

Ranges are written ``lo:hi`` (pixels, inclusive), coordinate lists as
comma-separated names and fixed coordinates as ``name:value`` pairs.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from .maps import MapConfig
from .model import CONFIG_KEYS, SourceParams
from .stochastic import GridSpec

EXPERIMENT_KEYS = {
    "analytic-map": {"seed"},
    "stochastic-run": {"seed", "gain_peak", "n_shots", "chunk_shots", "min_shots"},
    "compare": {"seed"},
    "swap-demo": {"seed", "a_um", "l_um", "delta_um", "y_um", "epsilon", "thetas_rad", "order_cut"},
    "perm-bench": {"seed", "n_max", "repeats"},
}
GRID_KEYS = ("n_pixels", "pitch_um", "window")
MAP_KEYS = ("scan", "u_range", "v_range", "fixed", "averaged", "mode", "avg_halfwidth", "normalization")
SECTIONS = ("source", "grid", "map", "experiment")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


@dataclass
class RunConfig:
    source: SourceParams | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    map: MapConfig = field(default_factory=MapConfig)
    experiment: dict = field(default_factory=dict)
    seed: int = 0
    raw: dict = field(default_factory=dict)

    def echo(self) -> dict:
        """Resolved configuration for manifests."""
        return {
            "source": {k: float(v) for k, v in self.source.to_config().items()} if self.source else None,
            "grid": {"n_pixels": self.grid.n_pixels, "pitch_um": self.grid.pitch_um, "window": self.grid.window},
            "map": {
                "scan": list(self.map.scan),
                "u_range": list(self.map.u_range),
                "v_range": list(self.map.v_range),
                "fixed": dict(self.map.fixed),
                "averaged": list(self.map.averaged),
                "mode": self.map.mode,
                "avg_halfwidth": self.map.avg_halfwidth,
                "normalization": self.map.normalization,
            },
            "experiment": dict(self.experiment),
            "seed": self.seed,
        }


def _num(path: str, text: str, kind=float):
    try:
        value = kind(text)
    except ValueError:
        raise ConfigError(f"{path}: cannot parse {text!r} as {kind.__name__}") from None
    if kind is float and not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    return value


def _range(path: str, text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise ConfigError(f"{path}: expected lo:hi, got {text!r}")
    return _num(path, lo.strip(), int), _num(path, hi.strip(), int)


def _names(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _fixed(path: str, text: str) -> dict:
    out = {}
    for item in _names(text):
        name, sep, val = item.partition(":")
        if not sep:
            raise ConfigError(f"{path}: expected name:value, got {item!r}")
        out[name.strip()] = _num(path, val.strip())
    return out


def _check_keys(section: str, got, allowed) -> None:
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}: unknown key (allowed: {', '.join(sorted(allowed))})")


def parse_config(text: str, subcommand: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"<file>: {exc}") from None
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{name}: unknown section (allowed: {', '.join(SECTIONS)})")
    cfg = RunConfig(raw={s: dict(parser[s]) for s in parser.sections()})

    if parser.has_section("source"):
        sec = parser["source"]
        _check_keys("source", sec, CONFIG_KEYS)
        values = {k: _num(f"source.{k}", v) for k, v in sec.items()}
        for key in CONFIG_KEYS[:3]:
            if key not in values:
                raise ConfigError(f"source.{key}: missing")
        try:
            cfg.source = SourceParams.from_config(values)
        except ValueError as exc:
            raise ConfigError(f"source: {exc}") from None
    elif subcommand in ("analytic-map", "stochastic-run", "swap-demo"):
        raise ConfigError("source: section missing")

    if parser.has_section("grid"):
        sec = parser["grid"]
        _check_keys("grid", sec, GRID_KEYS)
        kw = {}
        if "n_pixels" in sec:
            kw["n_pixels"] = _num("grid.n_pixels", sec["n_pixels"], int)
        if "pitch_um" in sec:
            kw["pitch_um"] = _num("grid.pitch_um", sec["pitch_um"])
        if "window" in sec:
            kw["window"] = _num("grid.window", sec["window"], int)
        try:
            cfg.grid = GridSpec(**kw)
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

    kw = {"pitch_um": cfg.grid.pitch_um, "window": cfg.grid.window}
    if parser.has_section("map"):
        sec = parser["map"]
        _check_keys("map", sec, MAP_KEYS)
        for key, val in sec.items():
            path = f"map.{key}"
            if key in ("u_range", "v_range"):
                kw[key] = _range(path, val)
            elif key in ("scan", "averaged"):
                kw[key] = _names(val)
            elif key == "fixed":
                kw[key] = _fixed(path, val)
            elif key == "avg_halfwidth":
                kw[key] = _num(path, val, int)
            else:
                kw[key] = val.strip()
    try:
        cfg.map = MapConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"map: {exc}") from None

    if parser.has_section("experiment"):
        sec = parser["experiment"]
        # one file may serve several subcommands, so any known key is accepted
        _check_keys("experiment", sec, set().union(*EXPERIMENT_KEYS.values()))
        for key, val in sec.items():
            path = f"experiment.{key}"
            if key in ("seed", "n_shots", "chunk_shots", "min_shots", "order_cut", "n_max", "repeats"):
                cfg.experiment[key] = _num(path, val, int)
            elif key == "thetas_rad":
                cfg.experiment[key] = [_num(path, t) for t in _names(val)]
            else:
                cfg.experiment[key] = _num(path, val)
        if "seed" in cfg.experiment:
            cfg.seed = cfg.experiment.pop("seed")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("experiment.seed: must be an unsigned 64-bit integer")
    return cfg


def load_config(path, subcommand: str) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, subcommand)
