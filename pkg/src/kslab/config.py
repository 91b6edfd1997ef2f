"""Flat ``key = value`` run configuration with ``#`` comments and dotted keys."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import ModelParams, ParameterError
from .criterion import amplitude_for_ratio
from .dynamics import SolverConfig, initial_data
from .field import GridSpec, Mollifier, ScalarField, mass, solve_helmholtz

KNOWN_KEYS = {
    "n", "N", "L", "m", "mass", "epsilon", "dt_init", "t_end", "cfl_safety",
    "snapshot_every", "scheme", "seed", "k_max", "chemotaxis",
    "mollifier.kind", "mollifier.width", "mollifier.enabled",
    "init.kind", "init.sigma", "init.center", "init.separation", "init.path",
    "init.c0", "init.noise", "init.ratio", "init.scale",
    "sweep.m", "sweep.mass", "sweep.scale",
}


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def canonical_text(cfg: dict[str, str]) -> str:
    return "".join(f"{k}={''.join(cfg[k].split())}\n" for k in sorted(cfg))


def config_hash(text_or_cfg) -> str:
    cfg = parse_config(text_or_cfg) if isinstance(text_or_cfg, str) else text_or_cfg
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()


def dump_config(cfg: dict[str, str]) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def _get(cfg, key, conv, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return conv(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {cfg[key]!r}") from exc


def _bool(s: str) -> bool:
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def float_list(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


@dataclass
class RunSetup:
    params: ModelParams
    grid: GridSpec
    solver: SolverConfig
    rho0: ScalarField
    c0: ScalarField
    k_max: int
    seed: int


def build_run(cfg: dict[str, str], base_dir: Path | None = None) -> RunSetup:
    """Turn a parsed config into parameters, solver settings and initial data.

    ``init.ratio`` sets the amplitude so that the critical norm is that
    multiple of the threshold for the resulting mass (overriding ``mass``);
    ``init.scale`` then multiplies the density (and its mass).
    """
    n = _get(cfg, "n", int, 3)
    m = _get(cfg, "m", float)
    kind = _get(cfg, "init.kind", str, "gaussian_blob")
    seed = _get(cfg, "seed", int, 0)
    c0_kind = _get(cfg, "init.c0", str, "resolvent")
    k_max = _get(cfg, "k_max", int, 4)
    if k_max < 0:
        raise ConfigError("k_max must be >= 0")
    try:
        if kind == "file":
            path = Path(_get(cfg, "init.path", str))
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            rho0, c0 = initial_data("file", path=path, mass_target=None, c0=c0_kind)
            grid = rho0.grid
            if grid.n != n:
                raise ConfigError(f"field file dimension {grid.n} differs from n={n}")
        else:
            grid = GridSpec(n, _get(cfg, "N", int, 48), _get(cfg, "L", float, 20.0))
            center = _get(cfg, "init.center", float_list, [0.0] * n)
            if len(center) != n:
                raise ConfigError(f"init.center needs {n} entries")
            rho0, c0 = initial_data(
                kind,
                grid,
                mass_target=_get(cfg, "mass", float, 1.0),
                sigma=_get(cfg, "init.sigma", float, 1.0),
                center=center,
                separation=_get(cfg, "init.separation", float, 4.0),
                c0=c0_kind,
                noise=_get(cfg, "init.noise", float, 0.0),
                seed=seed,
            )
        factor = 1.0
        if "init.ratio" in cfg:
            probe = ModelParams(n, m, mass(rho0))
            amp = amplitude_for_ratio(rho0, probe, _get(cfg, "init.ratio", float))
            factor = amp
        factor *= _get(cfg, "init.scale", float, 1.0)
        if factor != 1.0:
            rho0 = rho0 * factor
            c0 = solve_helmholtz(rho0) if c0_kind == "resolvent" else c0
        M0 = mass(rho0)
        params = ModelParams(n, m, M0)
        params.require_window()
        mol = None
        if _get(cfg, "mollifier.enabled", _bool, True):
            width = _get(cfg, "mollifier.width", float, 2 * grid.dx)
            mol = Mollifier(width, _get(cfg, "mollifier.kind", str, "gaussian"))
        eps_default = 1e-6 * float(np.max(rho0.values))
        solver = SolverConfig(
            epsilon=_get(cfg, "epsilon", float, eps_default),
            mollifier=mol,
            dt_init=_get(cfg, "dt_init", float, 1e-2),
            t_end=_get(cfg, "t_end", float, 1.0),
            cfl_safety=_get(cfg, "cfl_safety", float, 0.1),
            snapshot_every=_get(cfg, "snapshot_every", int, 10),
            scheme=_get(cfg, "scheme", str, "explicit_rho_implicit_c"),
            mollify=mol is not None,
            chemotaxis=_get(cfg, "chemotaxis", _bool, True),
        )
    except ConfigError:
        raise
    except (ParameterError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunSetup(params, grid, solver, rho0, c0, k_max, seed)
