"""Free energy, its Sobolev splitting, classification of initial data and
per-snapshot diagnostics along a trajectory."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import constants as K
from .constants import ModelParams
from .field import (
    Mollifier,
    ScalarField,
    convolve,
    gradient,
    integrate,
    lp_norm,
    mass,
    same_grid,
)

log = logging.getLogger(__name__)

VERDICTS = ("subcritical", "supercritical_norm", "indeterminate")


def _check_m(params: ModelParams) -> None:
    if params.m == 1:
        raise K.ParameterError("free energy needs m != 1")


def _grad_sq(c: ScalarField) -> np.ndarray:
    return sum(g.values**2 for g in gradient(c))


def free_energy(rho: ScalarField, c: ScalarField, params: ModelParams) -> float:
    """Lattice quadrature of rho^m/(m-1) - rho c + |grad c|^2/2 + c^2/2."""
    _check_m(params)
    grid = same_grid(rho, c)
    r, cv, m = rho.values, c.values, params.m
    dens = np.abs(r) ** m / (m - 1) - r * cv + 0.5 * (_grad_sq(c) + cv**2)
    return integrate(dens, grid)


@dataclass(frozen=True)
class EnergyReport:
    F: float
    F_eps: float
    F1: float
    F2: float
    dissipation: float
    cross_term: float

    def decomposition_holds(self, rtol: float = 1e-9) -> bool:
        return self.F_eps >= self.F1 + self.F2 - rtol * (1 + abs(self.F_eps))

    def sobolev_holds(self, rtol: float = 1e-9) -> bool:
        return self.F2 >= -rtol * (1 + abs(self.F2))


def split_energy(rho: ScalarField, c: ScalarField, params: ModelParams) -> tuple[float, float]:
    """(F1, F2) of the Sobolev splitting of the free energy."""
    n, m = params.n, params.m
    S = K.sobolev_constant(n)
    pc = 2 * n / (n + 2)
    F1 = lp_norm(rho, m) ** m / (m - 1) - lp_norm(rho, pc) ** 2 / (2 * S)
    F2 = 0.5 * integrate(_grad_sq(c), c.grid) - 0.5 * S * lp_norm(c, 2 * n / (n - 2)) ** 2
    return F1, F2


def dissipation(
    rho: ScalarField,
    c: ScalarField,
    c_t_estimate: ScalarField | None,
    params: ModelParams,
    epsilon: float,
    mollifier: Mollifier | None,
) -> float:
    """Face quadrature of (rho+eps)|D(m/(m-1)(rho+eps)^{m-1} - c*J)|^2 plus int c_t^2.

    Mobility on a face is the mean of the two adjacent cells; D is the
    one-sided face difference used by the time stepper.
    """
    _check_m(params)
    grid = same_grid(rho, c)
    m, dx = params.m, grid.dx
    u = rho.values + epsilon
    phi = convolve(c, mollifier).values if mollifier is not None else c.values
    pot = m / (m - 1) * u ** (m - 1) - phi
    total = 0.0
    for j in range(grid.n):
        mob = 0.5 * (u + np.roll(u, -1, j))
        d = (np.roll(pot, -1, j) - pot) / dx
        total += integrate(mob * d**2, grid)
    if c_t_estimate is not None:
        total += integrate(c_t_estimate.values**2, grid)
    return total


def free_energy_regularized(
    rho: ScalarField,
    c: ScalarField,
    params: ModelParams,
    epsilon: float = 0.0,
    mollifier: Mollifier | None = None,
    c_t_estimate: ScalarField | None = None,
) -> EnergyReport:
    _check_m(params)
    if not epsilon >= 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    grid = same_grid(rho, c)
    m = params.m
    r, cv = rho.values, c.values
    rj = convolve(rho, mollifier).values if mollifier is not None else r
    cross = integrate(rj * cv, grid)
    quad = 0.5 * integrate(_grad_sq(c) + cv**2, grid)
    if epsilon == 0:
        ent = integrate(np.abs(r) ** m, grid)
    else:
        ent = integrate((r + epsilon) ** m - epsilon**m, grid)
    F1, F2 = split_energy(rho, c, params)
    return EnergyReport(
        F=free_energy(rho, c, params),
        F_eps=ent / (m - 1) - cross + quad,
        F1=F1,
        F2=F2,
        dissipation=dissipation(rho, c, c_t_estimate, params, epsilon, mollifier),
        cross_term=cross,
    )


def barrier_lower_bound(rho: ScalarField, params: ModelParams) -> float:
    """f(||rho||_{2n/(n+2)}^{2n(m-1)/(n-2)}) with the mass taken from rho itself."""
    n, m = params.n, params.m
    M = mass(rho)
    if M <= 0:
        return 0.0
    s = lp_norm(rho, 2 * n / (n + 2)) ** (2 * n * (m - 1) / (n - 2))
    return K.barrier_f(s, ModelParams(n, m, M))


@dataclass(frozen=True)
class CriterionVerdict:
    norm_2n_over_np2: float
    threshold_norm: float
    F0: float
    F_star: float
    verdict: str

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def exit_code(self) -> int:
        return {"subcritical": 0, "supercritical_norm": 3, "indeterminate": 4}[self.verdict]


def decide(norm: float, threshold: float, F0: float, F_star: float) -> str:
    if F0 < F_star and norm < threshold:
        return "subcritical"
    if F0 < F_star and norm > threshold:
        return "supercritical_norm"
    return "indeterminate"


def classify(rho0: ScalarField, c0: ScalarField, params: ModelParams) -> CriterionVerdict:
    """Compare ||rho0||_{2n/(n+2)} and F(rho0, c0) with the thresholds for
    mass ``params.mass``."""
    params.require_window()
    tab = K.thresholds(params)
    n = params.n
    measured = mass(rho0)
    if measured > 0 and abs(measured - params.mass) > 1e-8 * params.mass:
        log.warning("density mass %.6g differs from the declared mass %.6g", measured, params.mass)
    norm = lp_norm(rho0, 2 * n / (n + 2))
    F0 = free_energy(rho0, c0, params)
    return CriterionVerdict(
        norm_2n_over_np2=norm,
        threshold_norm=tab.threshold_norm,
        F0=F0,
        F_star=tab.F_star,
        verdict=decide(norm, tab.threshold_norm, F0, tab.F_star),
    )


def threshold_mass_exponent(params: ModelParams) -> float:
    """beta with threshold_norm(M) = threshold_norm(1) M^beta."""
    n, m = params.n, params.m
    return (2 * n - m * (n + 2)) / (2 * (2 * n - 2 - m * n))


def amplitude_for_ratio(shape: ScalarField, params: ModelParams, ratio: float) -> float:
    """Amplitude a such that ||a g||_{2n/(n+2)} = ratio * threshold_norm(mass(a g)).

    The mass follows the amplitude, so the threshold moves with it; the
    norm-to-threshold ratio scales as a^{1-beta}.
    """
    if not ratio > 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    n = params.n
    g_norm = lp_norm(shape, 2 * n / (n + 2))
    g_mass = mass(shape)
    if g_norm <= 0 or g_mass <= 0:
        raise ValueError("shape must be nonnegative with positive mass")
    beta = threshold_mass_exponent(params)
    thr1 = K.thresholds(ModelParams(n, params.m, 1.0)).threshold_norm
    return (ratio * thr1 * g_mass**beta / g_norm) ** (1.0 / (1.0 - beta))


# ---------------------------------------------------------------- tracking


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    mass: float
    F: float
    F_eps: float
    F1: float
    F2: float
    dissipation: float
    norm_crit: float
    norm_m: float
    norm_inf: float
    moser_norms: tuple[float, ...]
    clipped_mass: float
    dt: float
    barrier_bound: float = math.nan
    norm_p0: float = math.nan
    warmup: bool = False
    under_resolved: tuple[bool, ...] = ()

    def values(self) -> list[float]:
        return [
            self.t, self.mass, self.F, self.F_eps, self.F1, self.F2, self.dissipation,
            self.norm_crit, self.norm_m, self.norm_inf, *self.moser_norms,
            self.clipped_mass, self.dt,
        ]

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.values())


def csv_header(k_max: int) -> list[str]:
    return (
        ["t", "mass", "F", "F_eps", "F1", "F2", "dissipation", "norm_crit", "norm_m", "norm_inf"]
        + [f"moser_p{k}" for k in range(1, k_max + 1)]
        + ["clipped_mass", "dt"]
    )


def diagnostics_row(state, params: ModelParams, cfg, k_max: int = 4) -> DiagnosticsRow:
    """Diagnostics for one SimState; c_t is the backward difference over the last step."""
    n, m = params.n, params.m
    rho = state.rho
    kernel = cfg.kernel(rho.grid) if cfg is not None else None
    eps = cfg.epsilon if cfg is not None else 0.0
    warm = state.c_prev is None or state.dt_last <= 0
    c_t = None if warm else (state.c - state.c_prev) * (1.0 / state.dt_last)
    rep = free_energy_regularized(rho, state.c, params, eps, kernel, c_t)
    exps = [K.moser_exponent(k, n) for k in range(1, k_max + 1)]
    moser = [lp_norm(rho, p) for p in exps]
    return DiagnosticsRow(
        t=state.t,
        mass=mass(rho),
        F=rep.F,
        F_eps=rep.F_eps,
        F1=rep.F1,
        F2=rep.F2,
        dissipation=rep.dissipation,
        norm_crit=lp_norm(rho, 2 * n / (n + 2)),
        norm_m=lp_norm(rho, m),
        norm_inf=lp_norm(rho, math.inf),
        moser_norms=tuple(moser),
        clipped_mass=state.clipped_mass,
        dt=state.dt_last,
        barrier_bound=barrier_lower_bound(rho, params),
        norm_p0=lp_norm(rho, 4 * n + 5),
        warmup=warm,
        under_resolved=tuple(peak_cells(rho, p) < 4 for p in exps),
    )


def peak_cells(rho: ScalarField, p: float) -> int:
    """Number of cells carrying half of int |rho|^p."""
    a = np.sort(np.abs(rho.values).ravel())[::-1]
    if a[0] == 0:
        return a.size
    w = (a / a[0]) ** p
    return int(np.searchsorted(np.cumsum(w), 0.5 * w.sum())) + 1


def warn_under_resolved(rows: Sequence[DiagnosticsRow], n: int) -> None:
    for k in range(len(rows[0].under_resolved) if rows else 0):
        hits = sum(r.under_resolved[k] for r in rows)
        if hits:
            log.warning(
                "L^%d quadrature peak-dominated (< 4 cells) in %d of %d rows",
                K.moser_exponent(k + 1, n), hits, len(rows),
            )


def track(trajectory, params: ModelParams, k_max: int = 4) -> list[DiagnosticsRow]:
    if not trajectory.snapshots:
        raise ValueError("empty trajectory")
    rows = [diagnostics_row(s, params, trajectory.cfg, k_max) for s in trajectory.snapshots]
    warn_under_resolved(rows, params.n)
    return rows


def format_float(x: float) -> str:
    return repr(float(x))


def diagnostics_csv(rows: Sequence[DiagnosticsRow], k_max: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(k_max))
    for r in rows:
        w.writerow([format_float(v) for v in r.values()])
    return buf.getvalue()


# ---------------------------------------------------------------- checks


@dataclass(frozen=True)
class InvariantReport:
    name: str
    passed: bool
    detail: str


def check_rows(
    rows: Sequence[DiagnosticsRow], params: ModelParams, expect_subcritical: bool = True
) -> list[InvariantReport]:
    """Row invariants: mass drift, energy monotonicity, norm threshold, F1/F2 bounds."""
    out = []
    M0 = rows[0].mass
    drift = max(abs(r.mass - M0) / M0 for r in rows) if M0 > 0 else 0.0
    out.append(InvariantReport("mass_drift", drift <= 1e-10, f"max relative drift {drift:.3e}"))
    worst = 0.0
    for a, b in zip(rows, rows[1:]):
        worst = max(worst, (b.F_eps - a.F_eps) / (1e-6 * (1 + abs(a.F_eps))))
    out.append(InvariantReport("energy_monotone", worst <= 1.0, f"worst increase / tol {worst:.3e}"))
    if expect_subcritical:
        thr = K.thresholds(params).threshold_norm
        top = max(r.norm_crit for r in rows)
        out.append(InvariantReport("norm_below_threshold", top < thr, f"max norm {top:.6g} vs {thr:.6g}"))
    f2 = min(r.F2 + 1e-9 * (1 + abs(r.F2)) for r in rows)
    out.append(InvariantReport("F2_nonnegative", f2 >= 0, f"min F2 + tol {f2:.3e}"))
    f1 = min(r.F1 - r.barrier_bound + 1e-9 * (1 + abs(r.F1)) for r in rows)
    out.append(InvariantReport("F1_barrier", f1 >= 0, f"min F1 - f + tol {f1:.3e}"))
    out.append(InvariantReport("finite", all(r.is_finite() for r in rows), ""))
    return out


def interpolation_chain_ok(row: DiagnosticsRow, n: int, rtol: float = 1e-9) -> bool:
    """||rho||_{p_k} <= ||rho||_inf^{1-p_1/p_k} ||rho||_{p_1}^{p_1/p_k} for each k."""
    if not row.moser_norms:
        return True
    p1 = K.moser_exponent(1, n)
    a = row.moser_norms[0]
    for k, val in enumerate(row.moser_norms, start=1):
        lam = p1 / K.moser_exponent(k, n)
        if val > row.norm_inf ** (1 - lam) * a**lam * (1 + rtol):
            return False
    return True


@dataclass(frozen=True)
class MoserCheck:
    C: float
    K: float
    sup_y0: float
    bound: float
    max_norm: float
    step_constants: tuple[float, ...]

    @property
    def passed(self) -> bool:
        return math.isfinite(self.max_norm) and self.max_norm <= self.bound


def moser_K(rows: Sequence[DiagnosticsRow], params: ModelParams) -> float:
    """max(1, M0, ||rho0||_inf)."""
    return max(1.0, params.mass, rows[0].norm_inf)


def _log_sup_power(values, p: float) -> float:
    vals = [v for v in values if v > 0]
    return p * math.log(max(vals)) if vals else -math.inf


def calibrate_moser_C(
    rows: Sequence[DiagnosticsRow], params: ModelParams
) -> tuple[float, tuple[float, ...]]:
    """Smallest C for which every measured step y_k <= 2 a_k max(sup y_{k-1}^2, K^{2^k})
    holds, y_k = sup_t ||rho||_{p_k}^{p_k}, floored where the closed bound dominates
    the recursion. Works in logs since y_k overflows quickly."""
    n = params.n
    log_K = math.log(moser_K(rows, params))
    log_prev = _log_sup_power((r.norm_p0 for r in rows), 4 * n + 5)
    steps = []
    for k in range(1, len(rows[0].moser_norms) + 1):
        log_y = _log_sup_power((r.moser_norms[k - 1] for r in rows), K.moser_exponent(k, n))
        log_unit = math.log(2 * K.moser_a(k, 1.0, n)) + max(2 * log_prev, 2**k * log_K)
        steps.append(math.exp(log_y - log_unit))
        log_prev = log_y
    return max(max(steps, default=0.0), K.moser_min_C(n)), tuple(steps)


def moser_check(
    rows: Sequence[DiagnosticsRow], params: ModelParams, C: float | None = None
) -> MoserCheck:
    """Compare max over rows and k of ||rho||_{p_k} with the closed ladder bound.

    ``C`` is calibrated on ``rows`` when not supplied.
    """
    steps: tuple[float, ...] = ()
    if C is None:
        C, steps = calibrate_moser_C(rows, params)
    n = params.n
    Kc = moser_K(rows, params)
    sup_y0 = max(r.norm_p0 for r in rows) ** (4 * n + 5)
    bound = K.moser_final_bound(C, n, sup_y0, Kc)
    max_norm = max((v for r in rows for v in r.moser_norms), default=0.0)
    return MoserCheck(C=C, K=Kc, sup_y0=sup_y0, bound=bound, max_norm=max_norm, step_constants=steps)
