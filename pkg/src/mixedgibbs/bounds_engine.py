"""Explicit convergence-rate and distance-bound formulas.

Given drift constants (zeta, l_drift), contraction factors (gamma inside the
small set, gamma0 outside), the small-set level xi and the norm-to-drift
constant c_norm, this module evaluates the admissible interpolation-exponent
interval, the geometric rate at an exponent, the optimized rate report, the
closed-form bound on the L1 distance between gamma densities sharing a shape,
and the assembled total-variation bound with its q * r_bar^(3/2) kernel
conversion factor.

All power and ratio expressions are evaluated in log space; at large group
counts the small-set level and the mixed powers underflow in linear space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

__all__ = [
    "RateInputs",
    "RateReport",
    "TvBound",
    "exponent_interval",
    "rate_at",
    "optimize_rate",
    "gamma_rate_l1_bound",
    "gamma_rate_l1_exact",
    "conversion_scale",
    "assemble_tv_bound",
]


@dataclass(frozen=True)
class RateInputs:
    """Drift and contraction constants feeding the rate machinery.

    ``xi`` must exceed ``2 * l_drift / (1 - zeta)`` for the small set to be
    usable; the constructor enforces that along with the basic ranges.
    """

    zeta: float
    l_drift: float
    gamma: float
    gamma0: float
    xi: float
    c_norm: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.zeta < 1.0):
            raise ValueError(f"zeta must lie in [0, 1), got {self.zeta}")
        if self.l_drift < 0:
            raise ValueError("l_drift must be nonnegative")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.gamma0 < self.gamma:
            raise ValueError("gamma0 must be at least gamma")
        if not self.xi > 2.0 * self.l_drift / (1.0 - self.zeta):
            raise ValueError(
                f"xi={self.xi} must exceed 2*l_drift/(1-zeta)="
                f"{2.0 * self.l_drift / (1.0 - self.zeta):.6g}"
            )
        if self.c_norm <= 0:
            raise ValueError("c_norm must be positive")

    def log_small_set_ratio(self) -> float:
        """log of (zeta*xi + 2*l_drift + 1) / (xi + 1)."""
        return math.log(self.zeta * self.xi + 2.0 * self.l_drift + 1.0) - math.log(self.xi + 1.0)


@dataclass(frozen=True)
class RateReport:
    """Outcome of the rate optimization, echoing the drift prefactor terms."""

    a_lo: float
    a_hi: float
    a_star: float | None
    rho: float | None
    a3_holds: bool
    prefactor_terms: tuple  # (c_norm, zeta, l_drift)
    proof_a: float | None = None
    proof_rho: float | None = None


def exponent_interval(inputs: RateInputs):
    """Admissible open interval for the interpolation exponent.

    The lower endpoint is log(2L+1) / (log(2L+1) - log(gamma)), zero when the
    drift intercept vanishes and, by convention, zero at gamma = 0.  The
    upper endpoint uses gamma0 clamped below at one; it is NaN (flagged
    undefined) when the small-set ratio is not below one.
    """
    log_num = math.log(2.0 * inputs.l_drift + 1.0)
    if inputs.gamma == 0.0 or log_num == 0.0:
        lo = 0.0
    else:
        lo = log_num / (log_num - math.log(inputs.gamma))
    log_ratio = inputs.log_small_set_ratio()
    if log_ratio >= 0.0:
        return lo, math.nan
    log_g0 = math.log(max(inputs.gamma0, 1.0))
    hi = -log_ratio / (log_g0 - log_ratio)
    return lo, hi


def rate_at(inputs: RateInputs, a: float) -> float:
    """Geometric rate at interpolation exponent ``a``, computed in log space."""
    if not (0.0 < a < 1.0):
        raise ValueError(f"exponent must lie in (0, 1), got {a}")
    log_ratio = inputs.log_small_set_ratio()
    term2 = a * math.log(inputs.gamma0) + (1.0 - a) * log_ratio if inputs.gamma0 > 0 else -math.inf
    if inputs.gamma == 0.0:
        term1 = -math.inf if a > 0 else 0.0
    else:
        term1 = a * math.log(inputs.gamma) + (1.0 - a) * math.log(2.0 * inputs.l_drift + 1.0)
    return math.exp(max(term1, term2))


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section(f, lo, hi, tol):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def optimize_rate(inputs: RateInputs, delta: float | None = None, grid: int = 1024) -> RateReport:
    """Locate the exponent minimizing the rate over the admissible interval.

    A log-uniform grid seeds a golden-section refinement to 1e-6 in the
    exponent.  When ``delta`` is given, the fixed asymptotic exponent
    ``2*delta / (3 + 2*delta)`` and its rate are reported alongside for
    comparison, provided it falls inside the interval.
    """
    lo, hi = exponent_interval(inputs)
    a3 = inputs.gamma0 <= 1.0 or (not math.isnan(hi) and lo < hi)
    prefactor = (inputs.c_norm, inputs.zeta, inputs.l_drift)
    if not a3:
        return RateReport(a_lo=lo, a_hi=hi, a_star=None, rho=None, a3_holds=False,
                          prefactor_terms=prefactor)
    if inputs.gamma0 <= 1.0 and math.isnan(hi):
        hi = 1.0
    span_lo = max(lo, 1e-12)
    grid_pts = np.geomspace(span_lo, hi, grid)
    grid_pts = grid_pts[(grid_pts > lo) & (grid_pts < hi)]
    if grid_pts.size == 0:
        grid_pts = np.array([0.5 * (lo + hi)])
    vals = np.array([rate_at(inputs, a) for a in grid_pts])
    k = int(np.argmin(vals))
    bl = grid_pts[k - 1] if k > 0 else max(lo, 0.5 * grid_pts[0])
    bh = grid_pts[k + 1] if k + 1 < grid_pts.size else min(hi, 0.5 * (grid_pts[-1] + hi))
    a_star = _golden_section(lambda a: rate_at(inputs, a), bl, bh, 1e-6)
    rho = rate_at(inputs, a_star)
    proof_a = proof_rho = None
    if delta is not None:
        proof_a = 2.0 * delta / (3.0 + 2.0 * delta)
        if lo < proof_a < hi:
            proof_rho = rate_at(inputs, proof_a)
    return RateReport(a_lo=lo, a_hi=hi, a_star=float(a_star), rho=float(rho), a3_holds=True,
                      prefactor_terms=prefactor, proof_a=proof_a, proof_rho=proof_rho)


def gamma_rate_l1_bound(alpha: float, beta: float, beta_prime: float) -> float:
    """Closed-form bound on the L1 distance between Gamma(alpha, beta) and
    Gamma(alpha, beta'), clamped at 2 and symmetric in the two rates."""
    if not (alpha > 0 and beta > 0 and beta_prime > 0):
        raise ValueError("shape and rates must be strictly positive")
    hi, lo = max(beta, beta_prime), min(beta, beta_prime)
    log_term = alpha * (math.log(hi) - math.log(lo))
    if log_term >= math.log(2.0):  # 2*(e^x - 1) >= 2 already
        return 2.0
    return min(2.0 * math.expm1(log_term), 2.0)


def gamma_rate_l1_exact(alpha: float, beta: float, beta_prime: float) -> float:
    """Exact L1 distance between two gamma densities sharing a shape.

    The densities cross once, at ``u = alpha * log(b'/b) / (b' - b)``; the
    distance is twice the CDF gap there.
    """
    if not (alpha > 0 and beta > 0 and beta_prime > 0):
        raise ValueError("shape and rates must be strictly positive")
    if beta == beta_prime:
        return 0.0
    lo, hi = min(beta, beta_prime), max(beta, beta_prime)
    u = alpha * (math.log(hi) - math.log(lo)) / (hi - lo)
    return 2.0 * float(gammainc(alpha, hi * u) - gammainc(alpha, lo * u))


def conversion_scale(q: int, r_bar: float, c_const: float) -> float:
    """Kernel-Lipschitz conversion factor ``c_const * q * r_bar^(3/2)``."""
    if c_const <= 0:
        raise ValueError("c_const must be positive")
    return c_const * q * r_bar**1.5


@dataclass(frozen=True)
class TvBound:
    """Assembled total-variation bound at one horizon."""

    raw: float
    clamped: float          # min(raw, 1); total variation never exceeds one
    drift_level_form: float  # companion form 2 * (V + l0) in place of the exact prefactor


def assemble_tv_bound(rate: RateReport, scale: float, v_eta: float, l0: float, n: int, q: int) -> TvBound:
    """Total-variation bound at horizon ``n`` from a rate report.

    Combines the conversion factor with the Wasserstein prefactor
    ``c_norm * q * ((zeta + 1) V + L + 1) / (1 - rho)`` and the geometric
    term ``rho^(n-1)``.  Requires ``n >= 2``, the smallest horizon at which
    the conversion applies, and a report with an admissible exponent.
    """
    if n < 2:
        raise ValueError("conversion requires n >= 2")
    if not rate.a3_holds or rate.rho is None:
        raise ValueError("rate report has no admissible exponent")
    c_norm, zeta, l_drift = rate.prefactor_terms
    geom = rate.rho ** (n - 1)
    wasserstein_prefactor = c_norm * q * ((zeta + 1.0) * v_eta + l_drift + 1.0) / (1.0 - rate.rho)
    raw = scale * wasserstein_prefactor * geom
    alt = scale * c_norm * q * 2.0 * (v_eta + l0) * geom
    return TvBound(raw=raw, clamped=min(raw, 1.0), drift_level_form=alt)
