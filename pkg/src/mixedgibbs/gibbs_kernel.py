"""The five-step marginal Gibbs transition, in two interchangeable forms.

One full transition of the chain on ``eta = (eta00, eta0, eta_1..eta_q)``:

1. draw ``lambda ~ Gamma(q/2 + a1, b1 + group_penalty/2)``
2. draw ``tau    ~ Gamma(N/2 + a2, b2 + residual_sum/2)``
3. draw ``eta00  ~ N_p(v, (q/tau) Q)``
4. draw ``eta0   | eta00`` from its univariate normal conditional
5. draw each ``eta_i | eta0, eta00`` independently

Steps 3-5 need a handful of per-(lambda, tau) aggregates.  The naive route
forms an N x N weighting matrix; here every aggregate is accumulated at the
group level in O(q p^2), so a transition touches the raw data only through
one O(N p) residual pass.

``transition`` consumes an RNG stream; ``random_map`` is the same update as a
deterministic function of an explicit noise tuple, which is what makes
common-random-number coupling possible.  Identical noise gives bitwise
identical output on both paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .model_core import ChainState, DerivedDesign, ModelContext, sufficient_stats

__all__ = [
    "NoiseDraw",
    "PrecisionPair",
    "GibbsConstants",
    "SingularDesignError",
    "draw_noise",
    "precisions_from_noise",
    "gibbs_constants",
    "eta_from_noise",
    "random_map",
    "transition",
    "log_state_conditional",
    "log_precision_conditional",
    "run_chain",
]

LOG_2PI = math.log(2.0 * math.pi)


class SingularDesignError(ValueError):
    """Raised when the regression-block precision matrix is not positive definite."""


@dataclass(frozen=True)
class NoiseDraw:
    """The full randomness of one transition.

    ``j1`` and ``j2`` are unit-rate gamma variates with shapes
    ``q/2 + a1`` and ``N/2 + a2``; the remaining entries are standard
    normals.  Holding this tuple fixed makes the transition deterministic.
    """

    n00: np.ndarray
    n0: float
    ni: np.ndarray
    j1: float
    j2: float

    def __post_init__(self):
        if not (self.j1 > 0 and self.j2 > 0):
            raise ValueError("gamma variates must be positive")


@dataclass(frozen=True)
class PrecisionPair:
    lam: float
    tau: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam) and self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("precisions must be strictly positive and finite")


def draw_noise(rng: np.random.Generator, ctx: ModelContext) -> NoiseDraw:
    """Draw one noise tuple.

    Consumption order is fixed at (j1, j2, n00, n0, n1..nq): two gamma
    variates followed by one block of p + 1 + q standard normals, so replays
    advance the stream identically.
    """
    data, hyper = ctx.data, ctx.hyper
    j1 = float(rng.standard_gamma(data.q / 2 + hyper.a1))
    j2 = float(rng.standard_gamma(data.n_total / 2 + hyper.a2))
    z = rng.standard_normal(data.p + 1 + data.q)
    return NoiseDraw(n00=z[: data.p], n0=float(z[data.p]), ni=z[data.p + 1 :], j1=j1, j2=j2)


def precisions_from_noise(state: ChainState, ctx: ModelContext, j1: float, j2: float) -> PrecisionPair:
    """Map unit-rate gamma noise to the two precision draws at this state."""
    gp, rs = sufficient_stats(state, ctx.data)
    d1 = ctx.hyper.b1 + 0.5 * gp
    d2 = ctx.hyper.b2 + 0.5 * rs
    if not (math.isfinite(d1) and math.isfinite(d2)):
        raise FloatingPointError("precision denominator overflowed; state is numerically unusable")
    return PrecisionPair(lam=j1 / d1, tau=j2 / d2)


@dataclass(frozen=True)
class GibbsConstants:
    """Per-(lambda, tau) quantities defining the conditional normal draws.

    ``chol_prec`` is the lower Cholesky factor of the regression-block
    precision ``X'X - xmx``; its inverse is the covariance shape ``Q``.
    """

    lam: float
    tau: float
    c: np.ndarray        # (q,) shrinkage weights r_i tau / (lam + r_i tau)
    t: np.ndarray        # (q,) total precisions lam + r_i tau
    z: np.ndarray        # (q,) t_i / (r_i lam tau)
    s0: float            # sum_i r_i (1 - c_i)
    wx: np.ndarray       # (p,) sum_i r_i (1 - c_i) xbar_i
    wy: float            # sum_i r_i (1 - c_i) ybar_i
    xmx: np.ndarray      # (p, p) weighted group-mean Gram block
    xmy: np.ndarray      # (p,) weighted group-mean cross moment
    chol_prec: np.ndarray
    v: np.ndarray        # (p,) conditional mean of eta00
    sum_inv_z: float

    def q_matrix(self) -> np.ndarray:
        """Materialize Q, the inverse of the regression-block precision."""
        p = self.chol_prec.shape[0]
        return cho_solve((self.chol_prec, True), np.eye(p))

    def log_det_q(self) -> float:
        return -2.0 * float(np.log(np.diag(self.chol_prec)).sum())


def gibbs_constants(lam: float, tau: float, design: DerivedDesign) -> GibbsConstants:
    """Assemble the conditional-draw aggregates in O(q p^2).

    Shrinkage weights are computed once per distinct group size and
    broadcast, so balanced designs pay for a single size.
    """
    if not (lam > 0 and tau > 0):
        raise ValueError("lambda and tau must be strictly positive")
    sizes = design.group_sizes
    ru = design.size_values.astype(np.float64)
    tu = lam + ru * tau
    cu = ru * tau / tu
    zu = tu / (ru * lam * tau)
    inv = design.size_inverse
    c, t, z = cu[inv], tu[inv], zu[inv]
    rem = sizes * (1.0 - c)            # r_i (1 - c_i)
    s0 = float(rem.sum())
    wx = rem @ design.xbar
    wy = float(rem @ design.ybar_groups)
    cr = c * sizes
    xmx = (design.xbar * cr[:, None]).T @ design.xbar + np.outer(wx, wx) / s0
    xmy = (cr * design.ybar_groups) @ design.xbar + wx * (wy / s0)
    prec = design.xtx - xmx
    try:
        chol_prec = cholesky(prec, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        smallest = float(np.linalg.eigvalsh(prec)[0])
        raise SingularDesignError(
            f"regression-block precision is not positive definite "
            f"(smallest eigenvalue {smallest:.3e})"
        ) from exc
    v = math.sqrt(design.q) * cho_solve((chol_prec, True), design.xty - xmy, check_finite=False)
    return GibbsConstants(
        lam=lam, tau=tau, c=c, t=t, z=z, s0=s0, wx=wx, wy=wy,
        xmx=xmx, xmy=xmy, chol_prec=chol_prec, v=v,
        sum_inv_z=float((1.0 / z).sum()),
    )


def eta_from_noise(consts: GibbsConstants, design: DerivedDesign, noise: NoiseDraw) -> ChainState:
    """Realize steps 3-5 as a deterministic function of the noise tuple.

    Any matrix B with B B' = Q gives the correct normal law for eta00; we
    use the inverse transpose of the precision's Cholesky factor, so no
    symmetric square root is formed.
    """
    q = design.q
    sq = math.sqrt(q)
    lam, tau = consts.lam, consts.tau
    eta00 = consts.v + math.sqrt(q / tau) * solve_triangular(
        consts.chol_prec.T, noise.n00, lower=False, check_finite=False
    )
    d = design.ybar_groups - design.xbar @ (eta00 / sq)
    mean0 = sq * float((d / consts.z).sum()) / consts.sum_inv_z
    eta0 = mean0 + math.sqrt(q / consts.sum_inv_z) * noise.n0
    mean_i = (lam / consts.t) * (eta0 / sq) + consts.c * d
    eta = mean_i + noise.ni / np.sqrt(consts.t)
    return ChainState(eta00=eta00, eta0=eta0, eta=eta)


def random_map(state: ChainState, noise: NoiseDraw, ctx: ModelContext) -> ChainState:
    """One transition as a deterministic map of (state, noise).

    The state enters only through the two sufficient statistics, so states
    with equal statistics map to identical images under identical noise.
    """
    pair = precisions_from_noise(state, ctx, noise.j1, noise.j2)
    consts = gibbs_constants(pair.lam, pair.tau, ctx.design)
    return eta_from_noise(consts, ctx.design, noise)


def transition(state: ChainState, rng: np.random.Generator, ctx: ModelContext) -> ChainState:
    """Advance the chain one step, consuming one noise tuple from the stream."""
    return random_map(state, draw_noise(rng, ctx), ctx)


def log_state_conditional(
    state: ChainState, consts: GibbsConstants, design: DerivedDesign
) -> float:
    """Exact log density of the state's full conditional at (lambda, tau).

    Sum of the p-variate normal for eta00, the univariate normal for eta0
    given eta00, and the q independent normals for the eta_i.
    """
    q = design.q
    sq = math.sqrt(q)
    lam, tau = consts.lam, consts.tau
    p = consts.v.shape[0]
    diff = state.eta00 - consts.v
    w = consts.chol_prec.T @ diff            # quadratic form via the factor
    quad00 = (tau / q) * float(w @ w)
    logdet_cov00 = p * math.log(q / tau) + consts.log_det_q()
    lp = -0.5 * (p * LOG_2PI + logdet_cov00 + quad00)

    d = design.ybar_groups - design.xbar @ (state.eta00 / sq)
    mean0 = sq * float((d / consts.z).sum()) / consts.sum_inv_z
    var0 = q / consts.sum_inv_z
    lp += -0.5 * (LOG_2PI + math.log(var0) + (state.eta0 - mean0) ** 2 / var0)

    mean_i = (lam / consts.t) * (state.eta0 / sq) + consts.c * d
    dev = state.eta - mean_i
    lp += float(-0.5 * (q * LOG_2PI - np.log(consts.t).sum() + (consts.t * dev * dev).sum()))
    return lp


def log_precision_conditional(lam: float, tau: float, state: ChainState, ctx: ModelContext) -> float:
    """Exact log density of the (lambda, tau) full conditional at this state.

    Product of two gamma densities with shapes (q/2 + a1, N/2 + a2) and
    rates (b1 + group_penalty/2, b2 + residual_sum/2).
    """
    if not (lam > 0 and tau > 0):
        raise ValueError("lambda and tau must be strictly positive")
    gp, rs = sufficient_stats(state, ctx.data)
    hyper = ctx.hyper
    a_lam = ctx.data.q / 2 + hyper.a1
    b_lam = hyper.b1 + 0.5 * gp
    a_tau = ctx.data.n_total / 2 + hyper.a2
    b_tau = hyper.b2 + 0.5 * rs

    def _gamma_logpdf(x, a, b):
        return a * math.log(b) - math.lgamma(a) + (a - 1) * math.log(x) - b * x

    return _gamma_logpdf(lam, a_lam, b_lam) + _gamma_logpdf(tau, a_tau, b_tau)


def run_chain(
    state: ChainState,
    n_iters: int,
    rng: np.random.Generator,
    ctx: ModelContext,
    record_states: bool = False,
):
    """Plain-Python chain driver.

    Returns ``(final_state, lam_tau, v_trace, states)`` where ``lam_tau`` is
    an (n, 2) array of the precision draws, ``v_trace`` the drift value of
    each visited state, and ``states`` an (n, p+q+1) array when
    ``record_states`` is set (otherwise None).  See ``fastpath.run_chain_fast``
    for the compiled driver used on long runs.
    """
    from .model_core import drift_value

    p, q = ctx.data.p, ctx.data.q
    lam_tau = np.empty((n_iters, 2))
    v_trace = np.empty(n_iters)
    states = np.empty((n_iters, p + q + 1)) if record_states else None
    for k in range(n_iters):
        noise = draw_noise(rng, ctx)
        pair = precisions_from_noise(state, ctx, noise.j1, noise.j2)
        consts = gibbs_constants(pair.lam, pair.tau, ctx.design)
        state = eta_from_noise(consts, ctx.design, noise)
        lam_tau[k, 0], lam_tau[k, 1] = pair.lam, pair.tau
        v_trace[k] = drift_value(state, ctx.design)
        if record_states:
            states[k] = state.as_vector()
    return state, lam_tau, v_trace, states
