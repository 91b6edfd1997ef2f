"""Heat semigroup on the torus, the Duhamel representation of the chemical
concentration, and numerical checks of the L^q -> L^p smoothing estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Literal, Sequence

import numpy as np
from scipy.special import gamma

from . import constants as K
from .field import (
    GridSpec,
    ScalarField,
    apply_multiplier,
    check_edge_mass,
    gradient,
    lp_norm,
    rfft,
    irfft,
    vector_lp_norm,
    wavenumbers,
)

INF = math.inf


@dataclass(frozen=True)
class SemigroupEstimateReport:
    p: float
    q: float
    t: float
    which: str
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        if self.rhs == INF:
            return 0.0
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else INF)

    def passed(self, tol: float = 1e-6) -> bool:
        return self.ratio <= 1 + tol

    def as_row(self) -> dict:
        d = asdict(self)
        d["ratio"] = self.ratio
        return d


CSV_FIELDS = ("p", "q", "t", "which", "lhs", "rhs", "ratio")


def heat_evolve(field: ScalarField, t: float) -> ScalarField:
    """e^{t Lap} f via the spectral multiplier exp(-|k|^2 t)."""
    if t < 0:
        raise ValueError(f"heat semigroup needs t >= 0, got {t}")
    if t == 0:
        return field
    _, k2 = wavenumbers(field.grid)
    return apply_multiplier(field, np.exp(-k2 * t))


def damped_heat(field: ScalarField, t: float) -> ScalarField:
    """e^{-t} e^{t Lap} f."""
    if t < 0:
        raise ValueError(f"needs t >= 0, got {t}")
    _, k2 = wavenumbers(field.grid)
    return apply_multiplier(field, np.exp(-(1.0 + k2) * t))


def _check_lattice(times: np.ndarray, t: float, rtol: float = 1e-9) -> int:
    if times.size == 0:
        raise ValueError("empty sample lattice")
    if abs(times[0]) > rtol * max(1.0, abs(t)):
        raise ValueError(f"sample lattice must start at 0, starts at {times[0]}")
    if times.size == 1:
        if t != 0:
            raise ValueError("single sample cannot cover t > 0")
        return 0
    h = np.diff(times)
    h0 = h[0]
    if h0 <= 0 or np.any(np.abs(h - h0) > rtol * h0):
        bad = int(np.argmax(np.abs(h - h0)))
        raise ValueError(f"gap in sample lattice between t={times[bad]} and t={times[bad + 1]}")
    j = int(round(t / h0))
    if j >= times.size or abs(times[j] - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"t={t} is not covered by the sample lattice")
    return j


def mild_solution_c(
    c0: ScalarField,
    rho_samples: Sequence[tuple[float, ScalarField]],
    t: float,
) -> ScalarField:
    """c(t) = e^{-t}e^{t Lap} c0 + int_0^t e^{s-t} e^{(t-s) Lap} rho(s) ds.

    The time integral uses the trapezoid rule on the uniform sample lattice.
    """
    if t < 0:
        raise ValueError(f"needs t >= 0, got {t}")
    times = np.array([s for s, _ in rho_samples], dtype=float)
    j = _check_lattice(times, t)
    grid = c0.grid
    _, k2 = wavenumbers(grid)
    a = 1.0 + k2
    acc = np.exp(-a * t) * rfft(c0.values)
    if j > 0:
        h = times[1] - times[0]
        for i in range(j + 1):
            s, rho = rho_samples[i]
            if rho.grid != grid:
                raise ValueError("sample grid differs from c0 grid")
            w = 0.5 * h if i in (0, j) else h
            acc = acc + w * np.exp(-a * (t - s)) * rfft(rho.values)
    return ScalarField(grid, irfft(acc, grid))


def forced_solution(c0: ScalarField, forcing: ScalarField, t: float) -> ScalarField:
    """Exact c(t) for c_t = Lap c - c + f with time-independent f."""
    _, k2 = wavenumbers(c0.grid)
    a = 1.0 + k2
    decay = np.exp(-a * t)
    coeff = decay * rfft(c0.values) + (-np.expm1(-a * t) / a) * rfft(forcing.values)
    return ScalarField(c0.grid, irfft(coeff, c0.grid))


def _time_power(p: float, q: float, n: int) -> float:
    return n / 2 * ((0.0 if q == INF else 1 / q) - (0.0 if p == INF else 1 / p))


def verify_smoothing_estimate(
    f: ScalarField,
    p: float,
    q: float,
    t: float,
    which: Literal["value", "gradient"] = "value",
    check_edge: bool = True,
    edge_tol: float = 1e-4,
) -> SemigroupEstimateReport:
    """Compare ||e^{t Lap} f||_p (or its gradient) with A (or B) t^{-...} ||f||_q."""
    if not t > 0:
        raise ValueError(f"needs t > 0, got {t}")
    n = f.grid.n
    A, B, _ = K.semigroup_constants(p, q, n)
    if check_edge and not check_edge_mass(f, tol=edge_tol):
        raise ValueError("input field is not concentrated away from the box edge")
    u = heat_evolve(f, t)
    fq = lp_norm(f, q)
    tp = _time_power(p, q, n)
    if which == "value":
        lhs = lp_norm(u, p)
        rhs = A * t ** (-tp) * fq
    elif which == "gradient":
        lhs = vector_lp_norm(gradient(u), p)
        rhs = B * t ** (-0.5 - tp) * fq
    else:
        raise ValueError(f"unknown estimate kind {which!r}")
    return SemigroupEstimateReport(p=p, q=q, t=t, which=which, lhs=lhs, rhs=rhs)


def gradient_sup_constant(q: float, n: int) -> float:
    """B_{inf,q,n} Gamma(1/2 - n/(2q)), the forcing coefficient of the sup-gradient bound."""
    if not q > n:
        raise ValueError(f"sup-gradient bound needs q > n, got q={q}, n={n}")
    _, B, _ = K.semigroup_constants(INF, q, n)
    return B * gamma(0.5 - n / (2 * q))


def verify_gradient_sup_estimate(
    c0: ScalarField,
    forcing: ScalarField,
    q: float,
    times: Sequence[float],
    forcing_sup_norm_q: float | None = None,
) -> list[SemigroupEstimateReport]:
    """Check ||grad c(t)||_inf <= ||grad c0||_inf + B_{inf,q,n} Gamma(1/2-n/2q) sup_s ||f(s)||_q
    for the time-independent forcing ``forcing`` at each t in ``times``."""
    n = c0.grid.n
    coef = gradient_sup_constant(q, n)
    g0 = vector_lp_norm(gradient(c0), INF)
    fq = lp_norm(forcing, q) if forcing_sup_norm_q is None else forcing_sup_norm_q
    rhs = g0 + coef * fq
    out = []
    for t in times:
        c = forced_solution(c0, forcing, t)
        lhs = vector_lp_norm(gradient(c), INF)
        out.append(SemigroupEstimateReport(p=INF, q=q, t=float(t), which="gradient_sup", lhs=lhs, rhs=rhs))
    return out


BATTERY_EXPONENTS = (2.0, 4.0, INF)
BATTERY_TIMES = (0.1, 0.5, 2.0)


def gaussian(grid: GridSpec, sigma: float, center=None, amplitude: float = 1.0) -> ScalarField:
    r2 = grid.radius_squared(center)
    return ScalarField(grid, amplitude * np.exp(-r2 / (2 * sigma**2)))


def estimate_battery(
    size: int = 50,
    n: int = 3,
    N: int = 48,
    L: float = 20.0,
    seed: int = 0,
    pairs: Sequence[tuple[float, float]] | None = None,
) -> list[SemigroupEstimateReport]:
    """Random Gaussians against the value and gradient smoothing estimates.

    Each instance draws (p, q) with q <= p from ``pairs`` (default: all pairs
    from {2, 4, inf}), t from {0.1, 0.5, 2}, a width in [0.8, 1.5], a centre
    within 2 of the origin and alternates value/gradient.
    """
    if pairs is None:
        pairs = [(p, q) for p in BATTERY_EXPONENTS for q in BATTERY_EXPONENTS if q <= p]
    for p, q in pairs:
        if q > p:
            raise ValueError(f"estimate needs q <= p, got p={p}, q={q}")
    grid = GridSpec(n, N, L)
    rng = np.random.default_rng(seed)
    reports = []
    for i in range(size):
        p, q = pairs[rng.integers(len(pairs))]
        t = BATTERY_TIMES[rng.integers(len(BATTERY_TIMES))]
        sigma = rng.uniform(0.8, 1.5)
        center = rng.uniform(-2.0, 2.0, size=n)
        f = gaussian(grid, sigma, center, amplitude=rng.uniform(0.5, 2.0))
        which = "value" if i % 2 == 0 else "gradient"
        reports.append(verify_smoothing_estimate(f, p, q, t, which))
    return reports
