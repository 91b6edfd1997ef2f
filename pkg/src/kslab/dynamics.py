"""Time integration of the regularised Keller-Segel system on the torus.

    rho_t = Lap (rho + eps)^m - div((rho + eps) grad(c * J))
    c_t   = Lap c - c + rho * J

rho is advanced by an explicit conservative finite-volume step: centred
differences of (rho + eps)^m across cell faces and upwinded drift with face
velocity grad(c * J). c is advanced by a backward-Euler spectral solve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Literal

import numpy as np

from .constants import ModelParams
from .field import (
    GridSpec,
    Mollifier,
    ScalarField,
    check_edge_mass,
    convolve,
    irfft,
    mass,
    read_field,
    rfft,
    solve_helmholtz,
    wavenumbers,
)

log = logging.getLogger(__name__)

NEG_TOL = 1e-12
BLOWUP_FACTOR = 1e3
DT_FLOOR = 1e-12


class StepError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t


class PositivityError(StepError):
    pass


class NumericalBlowup(StepError):
    """Numerical blow-up indicator; not a statement about the PDE."""


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-6
    mollifier: Mollifier | None = None
    dt_init: float = 1e-2
    t_end: float = 1.0
    cfl_safety: float = 0.1
    snapshot_every: int = 10
    scheme: Literal["explicit_rho_implicit_c", "fully_explicit"] = "explicit_rho_implicit_c"
    mollify: bool = True
    chemotaxis: bool = True

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.dt_init > 0:
            raise ValueError(f"dt_init must be positive, got {self.dt_init}")
        if not self.t_end >= 0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        if self.scheme not in ("explicit_rho_implicit_c", "fully_explicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def kernel(self, grid: GridSpec) -> Mollifier | None:
        if not self.mollify:
            return None
        return self.mollifier or Mollifier.default(grid)


@dataclass(frozen=True)
class SimState:
    rho: ScalarField
    c: ScalarField
    t: float = 0.0
    step_count: int = 0
    dt_last: float = 0.0
    c_prev: ScalarField | None = None
    clipped_mass: float = 0.0

    @property
    def grid(self) -> GridSpec:
        return self.rho.grid


@dataclass
class Trajectory:
    snapshots: list[SimState]
    cfg: SolverConfig
    params: ModelParams
    outcome: str = "completed"
    message: str = ""
    steps: int = 0
    dts: list[float] = dc_field(default_factory=list)

    @property
    def initial(self) -> SimState:
        return self.snapshots[0]

    @property
    def final(self) -> SimState:
        return self.snapshots[-1]


def _mollify(f: ScalarField, kernel: Mollifier | None) -> ScalarField:
    return f if kernel is None else convolve(f, kernel)


def initial_data(
    kind: str,
    grid: GridSpec | None = None,
    mass_target: float = 1.0,
    sigma: float = 1.0,
    center=None,
    separation: float = 4.0,
    path=None,
    c0: str = "resolvent",
    noise: float = 0.0,
    seed: int = 0,
) -> tuple[ScalarField, ScalarField]:
    """Build (rho0, c0).

    kinds: ``gaussian_blob`` (width ``sigma`` at ``center``), ``two_blobs``
    (two equal blobs at +-separation/2 on the first axis), ``file`` (KSF1 at
    ``path``; rescaled to ``mass_target`` unless it is None). ``c0`` is
    ``resolvent`` (solve -Lap c + c = rho0) or ``zero``. ``noise`` > 0 applies
    a seeded multiplicative perturbation before normalisation.
    """
    if kind == "file":
        rho = read_field(path)
        grid = rho.grid
        vals = np.array(rho.values)
    else:
        if grid is None:
            raise ValueError("grid required for analytic initial data")
        if kind == "gaussian_blob":
            vals = np.exp(-grid.radius_squared(center) / (2 * sigma**2))
        elif kind == "two_blobs":
            off = [separation / 2] + [0.0] * (grid.n - 1)
            vals = np.exp(-grid.radius_squared(off) / (2 * sigma**2)) + np.exp(
                -grid.radius_squared([-x for x in off]) / (2 * sigma**2)
            )
        else:
            raise ValueError(f"unknown initial data kind {kind!r}")
    if np.any(vals < 0):
        raise ValueError("initial density must be nonnegative")
    if noise > 0:
        rng = np.random.default_rng(seed)
        vals = vals * (1.0 + noise * rng.uniform(-1.0, 1.0, size=vals.shape))
    if mass_target is not None:
        if not mass_target > 0:
            raise ValueError(f"requested mass must be positive, got {mass_target}")
        total = float(np.sum(vals)) * grid.cell_volume
        if total <= 0:
            raise ValueError("initial density has zero mass")
        vals = vals * (mass_target / total)
    rho = ScalarField(grid, vals)
    if c0 == "resolvent":
        c = solve_helmholtz(rho)
    elif c0 == "zero":
        c = ScalarField.zeros(grid)
    else:
        raise ValueError(f"unknown c0 recipe {c0!r}")
    return rho, c


def _face_velocity(phi: np.ndarray, axis: int, dx: float) -> np.ndarray:
    return (np.roll(phi, -1, axis) - phi) / dx


def choose_dt(state: SimState, cfg: SolverConfig, params: ModelParams) -> float:
    """cfl_safety * min(diffusive limit, advective limit), capped by dt_init and t_end."""
    grid = state.grid
    n, dx, m = grid.n, grid.dx, params.m
    top = float(state.rho.values.max()) + cfg.epsilon
    diff_coef = 2 * n * m * top ** (m - 1) if top > 0 else 0.0
    dt_diff = dx**2 / diff_coef if diff_coef > 0 else math.inf
    vmax = 0.0
    if cfg.chemotaxis:
        phi = _mollify(state.c, cfg.kernel(grid)).values
        vmax = max(float(np.abs(_face_velocity(phi, j, dx)).max()) for j in range(n))
    dt_adv = dx / (vmax + 1e-300)
    dt = cfg.cfl_safety * min(dt_diff, dt_adv)
    if cfg.scheme == "fully_explicit":
        _, k2 = wavenumbers(grid)
        dt = min(dt, cfg.cfl_safety * 2.0 / (1.0 + float(k2.max())))
    dt = min(dt, cfg.dt_init)
    remaining = cfg.t_end - state.t
    if remaining > 0:
        dt = min(dt, remaining)
    return dt


def rho_flux_divergence(
    rho: np.ndarray, phi: np.ndarray | None, grid: GridSpec, epsilon: float, m: float
) -> np.ndarray:
    """Divergence of the face fluxes -D(rho+eps)^m + upwind(rho) * D phi."""
    dx = grid.dx
    G = (rho + epsilon) ** m
    div = np.zeros_like(rho)
    for j in range(grid.n):
        flux = -(np.roll(G, -1, j) - G) / dx
        if phi is not None:
            v = _face_velocity(phi, j, dx)
            flux = flux + np.where(v > 0, rho, np.roll(rho, -1, j)) * v
        div += (flux - np.roll(flux, 1, j)) / dx
    return div


def advance_c(c: ScalarField, source: ScalarField, dt: float) -> ScalarField:
    """Backward Euler for c_t = Lap c - c + source: (I - dt(Lap - I))^{-1}(c + dt source)."""
    _, k2 = wavenumbers(c.grid)
    coeff = (rfft(c.values) + dt * rfft(source.values)) / (1.0 + dt * (1.0 + k2))
    return ScalarField(c.grid, irfft(coeff, c.grid))


def step(state: SimState, cfg: SolverConfig, params: ModelParams, dt: float | None = None) -> SimState:
    grid = state.grid
    if dt is None:
        dt = choose_dt(state, cfg, params)
    if dt < DT_FLOOR:
        raise NumericalBlowup(f"time step {dt:.3e} below floor", state.t)
    kernel = cfg.kernel(grid)
    rho = state.rho.values
    phi = _mollify(state.c, kernel).values if cfg.chemotaxis else None

    new = rho - dt * rho_flux_divergence(rho, phi, grid, cfg.epsilon, params.m)

    top = float(new.max())
    low = float(new.min())
    clipped = 0.0
    if low < 0:
        if low < -NEG_TOL * max(top, 0.0):
            raise PositivityError(f"negative density {low:.3e} beyond clipping tolerance", state.t + dt)
        neg = new < 0
        clipped = -float(new[neg].sum()) * grid.cell_volume
        new = np.where(neg, 0.0, new)
        log.debug("clipped %.3e mass at t=%.6g", clipped, state.t + dt)
    old_top = float(rho.max())
    if old_top > 0 and top > BLOWUP_FACTOR * old_top:
        raise NumericalBlowup(f"max density grew by {top / old_top:.3g} in one step", state.t + dt)

    rho_new = ScalarField(grid, new)
    if cfg.scheme == "explicit_rho_implicit_c":
        c_new = advance_c(state.c, _mollify(rho_new, kernel), dt)
    else:
        _, k2 = wavenumbers(grid)
        src = _mollify(state.rho, kernel)
        coeff = rfft(state.c.values) + dt * (-(1.0 + k2) * rfft(state.c.values) + rfft(src.values))
        c_new = ScalarField(grid, irfft(coeff, grid))
    return SimState(
        rho=rho_new,
        c=c_new,
        t=state.t + dt,
        step_count=state.step_count + 1,
        dt_last=dt,
        c_prev=state.c,
        clipped_mass=state.clipped_mass + clipped,
    )


def run(
    cfg: SolverConfig,
    params: ModelParams,
    init: tuple[ScalarField, ScalarField],
    on_snapshot: Callable[[SimState], None] | None = None,
    keep_snapshots: bool = True,
    max_steps: int | None = None,
) -> Trajectory:
    """Integrate to cfg.t_end, recording every ``snapshot_every``-th state and the final one."""
    rho0, c0 = init
    if rho0.grid != c0.grid:
        raise ValueError("rho0 and c0 live on different grids")
    state = SimState(rho=rho0, c=c0)
    traj = Trajectory(snapshots=[], cfg=cfg, params=params)
    m0 = mass(rho0)

    def emit(s: SimState):
        check_edge_mass(s.rho, m0)
        if keep_snapshots:
            traj.snapshots.append(s)
        else:
            traj.snapshots[:] = [s]
        if on_snapshot is not None:
            on_snapshot(s)

    emit(state)
    t_tol = 1e-12 * max(1.0, cfg.t_end)
    while state.t < cfg.t_end - t_tol:
        if max_steps is not None and state.step_count >= max_steps:
            break
        try:
            nxt = step(state, cfg, params)
        except NumericalBlowup as exc:
            traj.outcome = "numerical_blowup_flag"
            traj.message = str(exc)
            log.warning("numerical blow-up indicator: %s", exc)
            break
        if abs(cfg.t_end - nxt.t) <= t_tol:
            nxt = replace(nxt, t=cfg.t_end)
        state = nxt
        traj.dts.append(state.dt_last)
        if state.step_count % cfg.snapshot_every == 0 and state.t < cfg.t_end:
            emit(state)
    if traj.snapshots[-1].step_count != state.step_count:
        emit(state)
    traj.steps = state.step_count
    return traj
