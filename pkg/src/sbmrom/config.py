"""Run configuration: INI files with flat key/value sections, plus shipped presets."""
from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import ParameterMap
from .solver import BoundaryData, FluidParams, NewtonSettings, StabilizationParams

PRESETS = ("exp1-small", "exp1-full", "exp2-small", "exp2-full")

DEFAULTS = {
    "mesh": {"bounds": "-2, 2, -1, 1", "h": "0.1"},
    "fluid": {"rho": "1.0", "nu": "0.02"},
    "boundary": {"u_in": "1.0", "inflow_profile": "uniform", "walls": "slip", "inflow_rule": "data"},
    "stabilization": {"gamma": "10.0", "c1": "4.0", "c2": "2.0"},
    "newton": {"tol_rel": "1e-10", "tol_abs": "1e-12", "max_iter": "25", "line_search": "true"},
    "experiment": {"name": "exp1", "mu0": "-2, -2", "mu1": "1, 1", "mu2": "1, 2", "center_y": "-1.0"},
    "offline": {"n_train": "60", "seed": "1", "snapshot_mode": "iterates", "n_modes": "40",
                "energy": "", "inner_product": "full", "supremizers": "false",
                "n_supremizers": "40", "workers": "1", "ghost_band": "3.0"},
    "online": {"n_test": "10", "seed": "2", "n_sweep": "5, 10, 20, 40", "compare_fom": "true",
               "export_fields": "false"},
    "output": {"dir": "runs/default"},
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


@dataclass(frozen=True)
class RunConfig:
    bounds: tuple[float, float, float, float]
    h: float
    fluid: FluidParams
    boundary: BoundaryData
    stabilization: StabilizationParams
    newton: NewtonSettings
    parameter_map: ParameterMap
    n_train: int
    train_seed: int
    snapshot_mode: str
    n_modes: int
    energy: float | None
    inner_product: str
    supremizers: bool
    n_supremizers: int
    workers: int
    ghost_band: float
    n_test: int
    test_seed: int
    n_sweep: tuple[int, ...]
    compare_fom: bool
    export_fields: bool
    output_dir: Path
    text: str = field(default="", repr=False, compare=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]


def parabolic_inflow(u_max: float, y0: float, y1: float):
    """Poiseuille profile with peak ``u_max`` across ``[y0, y1]``."""
    def profile(points):
        y = np.asarray(points)[..., 1]
        s = (y - y0) / (y1 - y0)
        out = np.zeros_like(np.asarray(points, dtype=float))
        out[..., 0] = 4.0 * u_max * s * (1.0 - s)
        return out
    return profile


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    return cp


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    return resources.files("sbmrom.presets").joinpath(f"{name}.ini").read_text()


def apply_overrides(cp: configparser.ConfigParser, overrides) -> None:
    for item in overrides or ():
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot:
            raise ValueError(f"override must look like section.key=value, got {item!r}")
        if section not in DEFAULTS or option not in DEFAULTS[section]:
            raise ValueError(f"unknown config key {key.strip()!r}")
        cp.set(section, option, value.strip())


def load_config(source: str | os.PathLike | None = None, overrides=None,
                env: dict | None = None) -> RunConfig:
    """Read a configuration from an INI path or a preset name.

    ``overrides`` are ``section.key=value`` strings applied after the file. The
    ``SROM_OUT`` environment variable, when set, replaces the output directory.
    """
    cp = _parser()
    if source is not None:
        src = str(source)
        if src in PRESETS:
            cp.read_string(preset_text(src), source=src)
        else:
            path = Path(src)
            if not path.is_file():
                raise FileNotFoundError(f"config file not found: {path}")
            cp.read(path)
    unknown = [f"{s}.{k}" for s in cp.sections() for k in cp[s]
               if s not in DEFAULTS or k not in DEFAULTS[s]]
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    apply_overrides(cp, overrides)
    env = os.environ if env is None else env
    if env.get("SROM_OUT"):
        cp.set("output", "dir", env["SROM_OUT"])
    return from_parser(cp)


def from_parser(cp: configparser.ConfigParser) -> RunConfig:
    g = cp.get
    bounds = _floats(g("mesh", "bounds"))
    if len(bounds) != 4:
        raise ValueError("mesh.bounds needs four numbers x0, x1, y0, y1")
    profile = g("boundary", "inflow_profile")
    u_in: object = cp.getfloat("boundary", "u_in")
    if profile == "parabolic":
        u_in = parabolic_inflow(float(u_in), bounds[2], bounds[3])
    elif profile != "uniform":
        raise ValueError(f"unknown inflow profile {profile!r}")
    ranges = tuple(_floats(g("experiment", k)) for k in ("mu0", "mu1", "mu2"))
    for r in ranges:
        if len(r) != 2:
            raise ValueError("parameter ranges need two numbers lo, hi")
    energy = g("offline", "energy").strip()
    mode = g("offline", "snapshot_mode")
    if mode not in ("iterates", "increments", "converged"):
        raise ValueError(f"unknown snapshot mode {mode!r}")
    inner = g("offline", "inner_product")
    if inner not in ("full", "active"):
        raise ValueError(f"unknown inner product {inner!r}")
    text = "\n".join(f"{s}.{k}={cp[s][k]}" for s in sorted(DEFAULTS) for k in sorted(DEFAULTS[s])
                     if not (s == "output" and k == "dir"))
    return RunConfig(
        bounds=bounds, h=cp.getfloat("mesh", "h"),
        fluid=FluidParams(rho=cp.getfloat("fluid", "rho"), nu=cp.getfloat("fluid", "nu")),
        boundary=BoundaryData(u_in=u_in, walls=g("boundary", "walls"),
                              inflow_rule=g("boundary", "inflow_rule")),
        stabilization=StabilizationParams(gamma=cp.getfloat("stabilization", "gamma"),
                                          c1=cp.getfloat("stabilization", "c1"),
                                          c2=cp.getfloat("stabilization", "c2")),
        newton=NewtonSettings(tol_rel=cp.getfloat("newton", "tol_rel"),
                              tol_abs=cp.getfloat("newton", "tol_abs"),
                              max_iter=cp.getint("newton", "max_iter"),
                              line_search=cp.getboolean("newton", "line_search")),
        parameter_map=ParameterMap(g("experiment", "name"), ranges,
                                   center_y=cp.getfloat("experiment", "center_y")),
        n_train=cp.getint("offline", "n_train"), train_seed=cp.getint("offline", "seed"),
        snapshot_mode=mode, n_modes=cp.getint("offline", "n_modes"),
        energy=float(energy) if energy else None, inner_product=inner,
        supremizers=cp.getboolean("offline", "supremizers"),
        n_supremizers=cp.getint("offline", "n_supremizers"),
        workers=cp.getint("offline", "workers"), ghost_band=cp.getfloat("offline", "ghost_band"),
        n_test=cp.getint("online", "n_test"), test_seed=cp.getint("online", "seed"),
        n_sweep=_ints(g("online", "n_sweep")), compare_fom=cp.getboolean("online", "compare_fom"),
        export_fields=cp.getboolean("online", "export_fields"),
        output_dir=Path(g("output", "dir")), text=text,
    )
