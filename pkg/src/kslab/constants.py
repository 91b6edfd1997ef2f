"""Closed-form constants, exponents and thresholds for the degenerate
Keller-Segel system with diffusion exponent 2n/(n+2) < m < 2 - 2/n.

Every function here is a pure function of its arguments. Infinite Lebesgue
exponents are passed as ``math.inf`` and follow the conventions
``1/inf = 0`` and ``C_inf = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma, gammaln

INF = math.inf


class ParameterError(ValueError):
    """Raised when (n, m, mass) or an exponent lies outside its admissible window."""


@dataclass(frozen=True)
class ModelParams:
    n: int
    m: float
    mass: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"dimension must be >= 1, got n={self.n}")
        if not self.mass >= 0:
            raise ParameterError(f"mass must be >= 0, got {self.mass}")

    @property
    def window(self) -> tuple[float, float]:
        return critical_exponents(self.n)

    def in_window(self) -> bool:
        lo, hi = self.window
        return self.n >= 3 and lo < self.m < hi

    def require_window(self) -> None:
        if self.n < 3:
            raise ParameterError(f"criterion requires n >= 3, got n={self.n}")
        lo, hi = self.window
        if not lo < self.m < hi:
            raise ParameterError(
                f"m={self.m} outside admissible window ({lo:.6g}, {hi:.6g}) for n={self.n}"
            )

    @property
    def mass_exponent(self) -> float:
        """Exponent (2n - m(n+2))/(n-2) carried by M0 in the barrier function."""
        n, m = self.n, self.m
        return (2 * n - m * (n + 2)) / (n - 2)

    @property
    def crit_exponent(self) -> float:
        """The Lebesgue exponent 2n/(n+2) of the criterion norm."""
        return 2 * self.n / (self.n + 2)


@dataclass(frozen=True)
class ConstantsTable:
    sobolev_S_n: float
    hls_C_n: float
    m_critical: float
    m_fujita: float
    s_star: float
    F_star: float
    threshold_norm: float

    def as_dict(self) -> dict:
        return {
            "sobolev_S_n": self.sobolev_S_n,
            "hls_C_n": self.hls_C_n,
            "m_critical": self.m_critical,
            "m_fujita": self.m_fujita,
            "s_star": self.s_star,
            "F_star": self.F_star,
            "threshold_norm": self.threshold_norm,
        }


@dataclass(frozen=True)
class ExponentSet:
    theta1: float
    theta2: float
    theta3: float
    theta4: float
    q1: float
    q2: float
    ell1: float
    ell2: float
    theta_p1: float
    k_exp: float
    two_ell1_theta3: float
    p_bound_holds: bool


def critical_exponents(n: int) -> tuple[float, float]:
    """Return (m_c, m*) = (2n/(n+2), 2 - 2/n)."""
    if n <= 0:
        raise ParameterError(f"dimension must be positive, got n={n}")
    return 2 * n / (n + 2), 2 - 2 / n


def sobolev_constant(n: int) -> float:
    """Sharp constant S_n in S_n ||u||_{2n/(n-2)}^2 <= ||grad u||_2^2."""
    if n < 3:
        raise ParameterError(f"Sobolev constant needs n >= 3, got n={n}")
    return float(
        n * (n - 2) / 4
        * 2 ** (2 / n)
        * math.pi ** (1 + 1 / n)
        * gamma((n + 1) / 2) ** (-2 / n)
    )


def hls_constant(n: int) -> float:
    """Sharp Hardy-Littlewood-Sobolev constant C(n) for the kernel |x-y|^{2-n}."""
    if n < 3:
        raise ParameterError(f"HLS constant needs n >= 3, got n={n}")
    return float(
        math.pi ** ((n - 2) / 2)
        / gamma(n / 2 + 1)
        * (gamma(n / 2) / gamma(n)) ** (-2 / n)
    )


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    if n < 1:
        raise ParameterError(f"dimension must be positive, got n={n}")
    return float(2 * math.pi ** (n / 2) / gamma(n / 2))


def young_Cq(q: float) -> float:
    """Lieb-Loss constant C_q = q^{1/q-1/2} (q-1)^{1/2-1/(2q)}, with C_1 = C_inf = 1."""
    if not q >= 1:
        raise ParameterError(f"C_q needs q >= 1, got q={q}")
    if q == INF or q == 1:
        return 1.0
    return q ** (1 / q - 0.5) * (q - 1) ** (0.5 - 0.5 / q)


def _recip(p: float) -> float:
    return 0.0 if p == INF else 1.0 / p


def young_exponent(p: float, q: float) -> float:
    """Kernel exponent r with 1/r = 1 + 1/p - 1/q."""
    if not 1 <= q <= p:
        raise ParameterError(f"need 1 <= q <= p, got q={q}, p={p}")
    inv_r = 1.0 + _recip(p) - _recip(q)
    if inv_r > 1.0:
        raise ParameterError(f"r = {1 / inv_r} < 1 for p={p}, q={q}")
    return INF if inv_r == 0.0 else 1.0 / inv_r


def semigroup_constants(p: float, q: float, n: int) -> tuple[float, float, float]:
    """Constants (A, B, r) of the L^q -> L^p heat-semigroup smoothing estimates.

    ||e^{tD} f||_p <= A t^{-n/2 (1/q-1/p)} ||f||_q and the gradient analogue
    with B and one extra t^{-1/2}. The kernel norms ||G||_r and ||grad G||_r
    are written with the unit-sphere area, which is what the polar-coordinate
    integration produces.
    """
    r = young_exponent(p, q)
    pref = young_Cq(q) * young_Cq(r) / young_Cq(p)
    omega = sphere_area(n)
    four_pi = (4 * math.pi) ** (n / 2)
    if r == INF:
        # ||G(.,1)||_inf and ||grad G(.,1)||_inf
        return pref / four_pi, pref / four_pi * math.sqrt(1 / (2 * math.e)), r
    log_a = (math.log(2 ** (n - 1) * omega) + gammaln(n / 2)) / r - n / (2 * r) * math.log(r)
    log_b = (math.log(2 ** (n - 1) * omega) + gammaln(r / 2 + n / 2)) / r - (
        0.5 + n / (2 * r)
    ) * math.log(r)
    return pref * math.exp(log_a) / four_pi, pref * math.exp(log_b) / four_pi, r


def barrier_f(s, params: ModelParams):
    """f(s) = M0^a s/(m-1) - s^{(n-2)/(n(m-1))}/(2 S_n); accepts scalars or arrays."""
    params.require_window()
    if not params.mass > 0:
        raise ParameterError("barrier function needs mass > 0")
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ParameterError("barrier function needs s >= 0")
    n, m = params.n, params.m
    gam = (n - 2) / (n * (m - 1))
    val = params.mass ** params.mass_exponent * s / (m - 1) - s**gam / (2 * sobolev_constant(n))
    return float(val) if val.ndim == 0 else val


def barrier_fprime(s, params: ModelParams):
    n, m = params.n, params.m
    gam = (n - 2) / (n * (m - 1))
    s = np.asarray(s, dtype=float)
    val = params.mass ** params.mass_exponent / (m - 1) - gam * s ** (gam - 1) / (
        2 * sobolev_constant(n)
    )
    return float(val) if val.ndim == 0 else val


def s_star(params: ModelParams) -> float:
    """Maximiser of the barrier function."""
    params.require_window()
    if not params.mass > 0:
        raise ParameterError("s* needs mass > 0")
    n, m = params.n, params.m
    base = 2 * sobolev_constant(n) * n / (n - 2) * params.mass ** params.mass_exponent
    return base ** (n * (m - 1) / (2 * n - 2 - m * n))


def F_star_closed_form(params: ModelParams, printed: bool = False) -> float:
    """Closed-form F* = f(s*).

    ``printed=True`` swaps in the alternative mass exponent (2n-mn-2n)/(2n-2-mn),
    kept only for comparison. The default exponent (2n-mn-2m)/(2n-2-mn) is
    what f(s*) reduces to.
    """
    params.require_window()
    n, m, M = params.n, params.m, params.mass
    d = 2 * n - 2 - m * n
    num = (2 * n - m * n - 2 * n) if printed else (2 * n - m * n - 2 * m)
    S = sobolev_constant(n)
    return d / ((m - 1) * (n - 2)) * M ** (num / d) * (2 * n * S / (n - 2)) ** ((n * m - n) / d)


def norm_exponent(params: ModelParams) -> float:
    """(n-2)/(2n(m-1)): maps s to the L^{2n/(n+2)} norm level s^{...}."""
    return (params.n - 2) / (2 * params.n * (params.m - 1))


def thresholds(params: ModelParams) -> ConstantsTable:
    params.require_window()
    n = params.n
    ss = s_star(params)
    m_c, m_f = critical_exponents(n)
    return ConstantsTable(
        sobolev_S_n=sobolev_constant(n),
        hls_C_n=hls_constant(n),
        m_critical=m_c,
        m_fujita=m_f,
        s_star=ss,
        F_star=barrier_f(ss, params),
        threshold_norm=ss ** norm_exponent(params),
    )


def _theta(lower: float, target: float, upper: float) -> float:
    """Interpolation weight theta with 1/target = (1-theta)/lower + theta/upper,
    all arguments being reciprocal exponents."""
    return (lower - target) / (lower - upper)


def interpolation_exponents(p: float, params: ModelParams, q: float) -> ExponentSet:
    """Exponent algebra of the uniform L^p estimate.

    Windows: p >= 1+m+2n/(n+2) (theta1, boundary gives theta1 = 0) and
    n < q < p (theta3). The remaining windows are implied by the first.
    """
    params.require_window()
    n, m = params.n, params.m
    p_min = 1 + m + 2 * n / (n + 2)
    if not p >= p_min:
        raise ParameterError(f"theta1 window failed: need p >= 1+m+2n/(n+2) = {p_min:.6g}, got {p}")
    if not n < q < p:
        raise ParameterError(f"theta3 window failed: need n < q < p, got q={q}, p={p}, n={n}")
    a = (n + 2) / (2 * n)
    grad_level = (n - 2) / (n * (m + p - 1))
    theta1 = _theta(a, 1 / (p - 1 - m), grad_level)
    theta2 = _theta(a, 1 / (p + 1 - m), grad_level)
    theta3 = _theta(a, 1 / q, 1 / p)
    theta4 = _theta(a, 1 / p, grad_level)
    theta_p1 = _theta(a, 1 / (p + 1), grad_level)

    w = m + p - 1
    g1 = theta1 * (p - 1 - m)
    q2 = INF if g1 == 0 else w / g1
    q1 = w / (w - g1)
    g2 = theta2 * (p + 1 - m)
    ell2 = w / g2
    ell1 = w / (w - g2)
    two_ell1_theta3 = 2 * ell1 * theta3
    return ExponentSet(
        theta1=theta1,
        theta2=theta2,
        theta3=theta3,
        theta4=theta4,
        q1=q1,
        q2=q2,
        ell1=ell1,
        ell2=ell2,
        theta_p1=theta_p1,
        k_exp=2 * theta_p1 * (p + 1) / w,
        two_ell1_theta3=two_ell1_theta3,
        p_bound_holds=two_ell1_theta3 < p,
    )


def two_ell1_theta3_closed(p: float, params: ModelParams, q: float) -> float:
    """The factored form of 2*ell1*theta3."""
    n, m = params.n, params.m
    return ((n + 2) * (m + p - 1) - 2 * (n - 2)) * (n + 2 - 2 * n / q) / (
        ((n + 2) * (m - 1) + 2) * (n + 2 - 2 * n / p)
    )


def q_upper(params: ModelParams) -> float:
    """2n/(n-(m-1)(n+2)); 2*ell1*theta3 < p eventually holds only for q below it."""
    n, m = params.n, params.m
    return 2 * n / (n - (m - 1) * (n + 2))


def scan_p0(params: ModelParams, q: float, p_grid=None) -> float | None:
    """Smallest scanned p beyond which 2*ell1*theta3 < p holds on the whole remaining grid.

    Returns None when the bound fails at the top of the grid (e.g. q too large).
    """
    if p_grid is None:
        lo = max(1 + params.m + 2 * params.n / (params.n + 2), q) + 1e-9
        p_grid = np.geomspace(max(lo, 10.0), 1e4, 4000)
    p_grid = np.asarray(p_grid, dtype=float)
    ok = np.array([two_ell1_theta3_closed(p, params, q) < p for p in p_grid])
    if not ok[-1]:
        return None
    bad = np.nonzero(~ok)[0]
    return float(p_grid[0] if bad.size == 0 else p_grid[bad[-1] + 1])


@dataclass(frozen=True)
class MoserStepExponents:
    p_prev: int
    p_k: int
    theta1: float
    q1: float
    q2: float
    theta: float
    ell1: float
    ell2: float
    eta1: float
    eta2: float


def moser_exponent(k: int, n: int) -> int:
    """Ladder exponent p_k = 2^k + 4n + 4."""
    if k < 0:
        raise ParameterError(f"ladder index must be >= 0, got k={k}")
    if n < 1:
        raise ParameterError(f"dimension must be >= 1, got n={n}")
    return 2**k + 4 * n + 4


def moser_step_exponents(k: int, params: ModelParams) -> MoserStepExponents:
    """Interpolation exponents for the step p_{k-1} -> p_k of the ladder."""
    if k < 1:
        raise ParameterError("ladder step needs k >= 1")
    n, m = params.n, params.m
    pk, pp = moser_exponent(k, n), moser_exponent(k - 1, n)
    w = m + pk - 1
    grad_level = (n - 2) / (n * w)
    theta1 = _theta(1 / pp, 1 / (pk + 1 - m), grad_level)
    g = theta1 * (pk - m + 1)
    q1 = w / g
    q2 = w / (w - g)
    theta = _theta(1 / pp, 1 / pk, grad_level)
    ell1 = w / (theta * pk)
    ell2 = w / (w - theta * pk)
    return MoserStepExponents(
        p_prev=pp,
        p_k=pk,
        theta1=theta1,
        q1=q1,
        q2=q2,
        theta=theta,
        ell1=ell1,
        ell2=ell2,
        eta1=pk * (1 - theta) * ell2 / pp,
        eta2=(pk - m + 1) * q2 * (1 - theta1) / pp,
    )


def moser_a(k: int, C: float, n: int) -> float:
    """Recursion coefficient a_k = 3 C (4n)^{2n} 4^{kn}."""
    return 3 * C * (4 * n) ** (2 * n) * 4 ** (k * n)


def moser_final_bound(C: float, n: int, sup_y0: float, K: float) -> float:
    """k-independent bound 6 C (4n)^{2n} 4^{2n} max(sup_y0, K) on ||rho||_{p_k}.

    It dominates the p_k-th roots of the recursion
    y_k <= 2 a_k max(sup y_{k-1}^2, K^{2^k}) once 6 C (4n)^{2n} >= 1.
    """
    if not C > 0:
        raise ParameterError(f"C must be positive, got {C}")
    if not sup_y0 >= 0:
        raise ParameterError(f"sup_y0 must be nonnegative, got {sup_y0}")
    if not K >= 1:
        raise ParameterError(f"K must be >= 1, got {K}")
    return 6 * C * (4 * n) ** (2 * n) * 4 ** (2 * n) * max(sup_y0, K)


def moser_min_C(n: int) -> float:
    """Smallest C for which the closed bound dominates the recursion: 6 C (4n)^{2n} = 1."""
    return 1.0 / (6 * (4 * n) ** (2 * n))
