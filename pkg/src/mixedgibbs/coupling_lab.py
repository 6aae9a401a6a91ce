"""Coupled-chain estimators for drift and contraction constants.

Two chains advanced under the same noise tuple form a coupling of the
transition kernel with itself.  This module uses such couplings to estimate

* the contraction factors (inside and outside the small set) as per-pair
  mean chord ratios ``E ||f(a) - f(b)|| / ||a - b||`` over shared noise,
* the drift envelope ``(zeta_hat, l_hat)`` dominating Monte Carlo estimates
  of the conditional drift expectation over a spread of probe states,
* coupled-chain upper bounds on the Wasserstein distance to stationarity,
* a calibration constant for the kernel-Lipschitz conversion, via the exact
  L1 distances between the gamma stages of the kernel at nearby states.

The chord ratio is a certified lower bound on the segment-derivative
contraction factor (mean value inequality), so the estimates here support
trend studies rather than certified suprema.  Stationary states are proxied
by post-burn-in draws, guarded by a stationarity diagnostic on the drift
trace.

Work items (pairs, probes, replicates) each derive an independent RNG from
(seed, item index) and results are reduced by index, so output never depends
on scheduling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .bounds_engine import gamma_rate_l1_exact
from .gibbs_kernel import NoiseDraw, draw_noise, random_map, run_chain
from .model_core import ChainState, ModelContext, drift_value, sufficient_stats

__all__ = [
    "CouplingConfig",
    "ContractionEstimate",
    "DriftEstimate",
    "coupled_step",
    "estimate_contraction",
    "estimate_drift",
    "make_drift_probes",
    "wasserstein_curve",
    "geometric_decay_rate",
    "stationary_proxies",
    "v_trace_diagnostic",
    "calibrate_kernel_lipschitz",
    "worker_count",
]


def worker_count() -> int:
    """Worker cap from MIXEDGIBBS_THREADS; defaults to sequential."""
    try:
        return max(1, int(os.environ.get("MIXEDGIBBS_THREADS", "1")))
    except ValueError:
        return 1


def _map_indexed(fn, n_items: int):
    """Apply fn(i) for i in range(n_items), optionally on a thread pool.

    Results come back ordered by index regardless of scheduling.
    """
    workers = worker_count()
    if workers == 1 or n_items <= 1:
        return [fn(i) for i in range(n_items)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_items)))


@dataclass(frozen=True)
class CouplingConfig:
    """Controls for the contraction study.

    ``xi`` defaults to ``q**(delta/3)`` when omitted, matching the small-set
    level used by the rate bounds.
    """

    delta: float
    pairs: int = 48
    reps_per_pair: int = 64
    burn_in: int = 500
    seed: int = 0
    xi: float | None = None

    def __post_init__(self):
        if not (self.delta > 0 and self.pairs >= 1 and self.reps_per_pair >= 1 and self.burn_in >= 1):
            raise ValueError("delta must be positive and all counts at least 1")
        if self.xi is not None and not self.xi > 0:
            raise ValueError("xi must be positive")

    def resolve_xi(self, q: int) -> float:
        return self.xi if self.xi is not None else q ** (self.delta / 3.0)


@dataclass(frozen=True)
class ContractionEstimate:
    gamma_in: float | None
    gamma_out: float | None
    n_in: int
    n_out: int
    ci_halfwidth_in: float | None
    ci_halfwidth_out: float | None
    xi: float


@dataclass(frozen=True)
class DriftEstimate:
    zeta_hat: float
    l_hat: float
    probe_count: int
    fit_residual_max: float


def coupled_step(a: ChainState, b: ChainState, noise: NoiseDraw, ctx: ModelContext):
    """Advance both states under one shared noise tuple.

    Each output is marginally a valid transition from its input.
    """
    return random_map(a, noise, ctx), random_map(b, noise, ctx)


def default_start(ctx: ModelContext) -> ChainState:
    """Data-informed starting state: centered group effects, zero regression block."""
    design = ctx.design
    return ChainState(
        eta00=np.zeros(ctx.data.p),
        eta0=0.0,
        eta=design.ybar_groups - design.ybar,
    )


def v_trace_diagnostic(v_trace: np.ndarray, n_batches: int = 20):
    """Half-trace stationarity check on a drift-value series.

    Splits the trace in two halves and compares their means against a batch
    means standard error.  Returns ``(ok, zscore)`` with ok at |z| < 4.
    """
    v = np.asarray(v_trace, dtype=np.float64)
    half = v.size // 2
    if half < n_batches:
        raise ValueError("trace too short for the diagnostic")

    def _batch_se(x):
        nb = n_batches // 2
        usable = (x.size // nb) * nb
        means = x[:usable].reshape(nb, -1).mean(axis=1)
        return float(means.std(ddof=1) / math.sqrt(nb))

    m1, m2 = float(v[:half].mean()), float(v[half:].mean())
    se = math.hypot(_batch_se(v[:half]), _batch_se(v[half:]))
    z = (m2 - m1) / se if se > 0 else 0.0
    return abs(z) < 4.0, z


def stationary_proxies(ctx: ModelContext, burn_in: int, count: int, rng: np.random.Generator, thin: int = 10):
    """Draw approximate stationary states from one long chain.

    Runs burn_in iterations from the data-informed start, checks the drift
    trace diagnostic over the collection window, then returns every
    ``thin``-th state.
    """
    state = default_start(ctx)
    state, _, _, _ = _advance(state, burn_in, rng, ctx)
    total = count * thin
    state, _, v_trace, states = _advance(state, total, rng, ctx, record=True)
    ok, z = v_trace_diagnostic(v_trace) if total >= 40 else (True, 0.0)
    if not ok:
        import warnings

        warnings.warn(f"stationary proxy drift trace drifted (z={z:.2f}); consider a longer burn-in")
    p, q = ctx.data.p, ctx.data.q
    return [ChainState.from_vector(states[k], p, q) for k in range(thin - 1, total, thin)]


def _advance(state, n, rng, ctx, record=False):
    """Chain driver indirection: compiled when available, reference otherwise."""
    from . import fastpath

    if fastpath.HAVE_NUMBA:
        return fastpath.run_chain_fast(state, n, rng, ctx, record_states=record)
    return run_chain(state, n, rng, ctx, record_states=record)


def make_drift_probes(ctx: ModelContext, count: int, rng: np.random.Generator,
                      burn_in: int = 500, v_decades: float = 2.5):
    """Probe states whose drift values span at least ``v_decades`` decades.

    Each probe is a stationary proxy pushed along a random direction; the
    push scales sweep a log range so the squared growth of the drift value
    covers the requested span.
    """
    anchors = stationary_proxies(ctx, burn_in, max(4, count // 8), rng)
    dim = ctx.data.p + ctx.data.q + 1
    scales = np.geomspace(10 ** (-v_decades / 4), 10 ** (v_decades / 2), count)
    probes = []
    for k in range(count):
        base = anchors[k % len(anchors)].as_vector()
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        probes.append(ChainState.from_vector(base + scales[k] * math.sqrt(dim) * direction,
                                             ctx.data.p, ctx.data.q))
    return probes


def estimate_drift(ctx: ModelContext, probes, reps: int, seed: int = 0) -> DriftEstimate:
    """Estimate the drift envelope from Monte Carlo conditional expectations.

    For each probe, ``reps`` independent transitions give a mean and CI for
    the expected drift value after one step.  The envelope (zeta_hat, l_hat)
    is the least-total-slack line dominating every CI-inflated estimate,
    solved as a linear program; ties break toward the smaller slope, so
    probes at a single abscissa yield a flat envelope at the largest
    estimate.
    """
    if reps < 2:
        raise ValueError("at least two replications are needed for a CI")
    probes = list(probes)
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(probes))

    def one_probe(i):
        rng = np.random.default_rng(children[i])
        vals = np.empty(reps)
        for r in range(reps):
            vals[r] = drift_value(random_map(probes[i], draw_noise(rng, ctx), ctx), ctx.design)
        return float(vals.mean()), float(1.96 * vals.std(ddof=1) / math.sqrt(reps))

    results = _map_indexed(one_probe, len(probes))
    v_at = np.array([drift_value(s, ctx.design) for s in probes])
    upper = np.array([m + hw for m, hw in results])
    zeta_hat, l_hat = _envelope_fit(v_at, upper)
    resid = float((upper - (zeta_hat * v_at + l_hat)).max())
    return DriftEstimate(zeta_hat=zeta_hat, l_hat=l_hat, probe_count=len(probes),
                         fit_residual_max=resid)


def _envelope_fit(v, u):
    """Least-total-slack dominating line with minimal-slope tie-break.

    minimize  mean(zeta * v + l - u)  subject to  zeta * v_i + l >= u_i,
    zeta >= 0, l >= 0.  A second solve pins the smallest zeta among optima.
    """
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    a_ub = np.column_stack([-v, -np.ones_like(v)])
    b_ub = -u
    c = np.array([v.mean(), 1.0])
    first = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=[(0, None), (0, None)], method="highs")
    if not first.success:
        raise RuntimeError(f"envelope fit failed: {first.message}")
    opt = float(first.fun)
    # among lines with (near) optimal total slack, take the flattest
    second = linprog(
        np.array([1.0, 0.0]),
        A_ub=np.vstack([a_ub, c]),
        b_ub=np.concatenate([b_ub, [opt + 1e-9 * (1.0 + abs(opt))]]),
        bounds=[(0, None), (0, None)],
        method="highs",
    )
    zeta, l_hat = (second.x if second.success else first.x)
    return float(zeta), float(l_hat)


def _chord_ratio(pair, reps, rng, ctx):
    """Mean over shared-noise replications of ||f(a) - f(b)|| / ||a - b||."""
    a, b = pair
    gap = float(np.linalg.norm(a.as_vector() - b.as_vector()))
    ratios = np.empty(reps)
    for r in range(reps):
        fa, fb = coupled_step(a, b, draw_noise(rng, ctx), ctx)
        ratios[r] = float(np.linalg.norm(fa.as_vector() - fb.as_vector())) / gap
    return ratios


def _sample_pairs(ctx, cfg, rng):
    """Pairs straddling the small set: near pairs at stationary proxies for
    the inside, radially pushed copies for the outside.

    Every requested pair lands in exactly one region, so the two counts sum
    to the configured total.  The inside region stays empty when even the
    proxy states exceed the small-set level.
    """
    xi = cfg.resolve_xi(ctx.data.q)
    dim = ctx.data.p + ctx.data.q + 1
    anchors = stationary_proxies(ctx, cfg.burn_in, max(4, cfg.pairs // 4), rng)
    p, q = ctx.data.p, ctx.data.q
    inside, outside = [], []
    want_in = cfg.pairs - cfg.pairs // 2

    def v_sum(a, b):
        return drift_value(a, ctx.design) + drift_value(b, ctx.design)

    for k in range(cfg.pairs):
        base = anchors[k % len(anchors)].as_vector()
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        a = ChainState.from_vector(base, p, q)
        b = ChainState.from_vector(base + 0.1 * direction, p, q)
        if len(inside) < want_in and v_sum(a, b) <= xi:
            inside.append((a, b))
            continue
        push = 1.0
        for _ in range(200):
            a = ChainState.from_vector(base + push * direction, p, q)
            b = ChainState.from_vector(base + (push + 0.1 * (1.0 + push)) * direction, p, q)
            if v_sum(a, b) > xi:
                break
            push *= 2.0
        outside.append((a, b))
    return inside, outside, xi


def estimate_contraction(ctx: ModelContext, cfg: CouplingConfig) -> ContractionEstimate:
    """Max-over-pairs mean chord ratio inside and outside the small set.

    Bootstrap half-widths are attached for the maximizing pair of each
    region.  A region that received no pairs reports None, not zero.
    """
    ss_pairs, ss_in, ss_out, ss_boot = np.random.SeedSequence(cfg.seed).spawn(4)
    pair_rng = np.random.default_rng(ss_pairs)
    inside, outside, xi = _sample_pairs(ctx, cfg, pair_rng)

    def run_region(pairs, ss_region, ss_region_boot):
        if not pairs:
            return None, None
        children = ss_region.spawn(len(pairs))

        def one(i):
            rng = np.random.default_rng(children[i])
            return _chord_ratio(pairs[i], cfg.reps_per_pair, rng, ctx)

        all_ratios = _map_indexed(one, len(pairs))
        means = np.array([r.mean() for r in all_ratios])
        k = int(np.argmax(means))
        boot_rng = np.random.default_rng(ss_region_boot)
        samples = all_ratios[k]
        boots = np.array([
            samples[boot_rng.integers(0, samples.size, samples.size)].mean()
            for _ in range(200)
        ])
        return float(means[k]), float(1.96 * boots.std(ddof=1))

    boot_in, boot_out = ss_boot.spawn(2)
    gamma_in, hw_in = run_region(inside, ss_in, boot_in)
    gamma_out, hw_out = run_region(outside, ss_out, boot_out)
    return ContractionEstimate(
        gamma_in=gamma_in, gamma_out=gamma_out,
        n_in=len(inside), n_out=len(outside),
        ci_halfwidth_in=hw_in, ci_halfwidth_out=hw_out,
        xi=xi,
    )


def wasserstein_curve(ctx: ModelContext, start: ChainState, n_max: int, reps: int,
                      burn_in: int, seed: int = 0, partner_states=None):
    """Coupled-chain upper bound on the Wasserstein distance to stationarity.

    Each replicate pairs a chain from ``start`` with a partner begun at an
    independent post-burn-in state; both advance under shared noise.  Returns
    arrays ``(n, w_hat, ci_lo, ci_hi)`` where w_hat(n) is the mean distance
    over replicates at step n and w_hat(0) is the mean initial distance.
    Since every coupling upper-bounds the infimum, the curve is a valid
    Wasserstein bound up to the proxy bias of the partner draw.
    """
    root = np.random.SeedSequence(seed)
    proxy_rng = np.random.default_rng(root.spawn(1)[0])
    if partner_states is None:
        partner_states = stationary_proxies(ctx, burn_in, reps, proxy_rng)
    children = root.spawn(reps)

    def one_rep(i):
        rng = np.random.default_rng(children[i])
        a, b = start, partner_states[i % len(partner_states)]
        dists = np.empty(n_max + 1)
        dists[0] = np.linalg.norm(a.as_vector() - b.as_vector())
        for n in range(1, n_max + 1):
            a, b = coupled_step(a, b, draw_noise(rng, ctx), ctx)
            dists[n] = np.linalg.norm(a.as_vector() - b.as_vector())
        return dists

    all_d = np.vstack(_map_indexed(one_rep, reps))
    w_hat = all_d.mean(axis=0)
    se = all_d.std(axis=0, ddof=1) / math.sqrt(reps)
    ns = np.arange(n_max + 1)
    return ns, w_hat, w_hat - 1.96 * se, w_hat + 1.96 * se


def geometric_decay_rate(ns, w_hat, floor_ratio: float = 1e-8):
    """Fitted per-step decay factor of a distance curve.

    Least-squares slope of log w over the initial decaying stretch, cut off
    where the curve falls below ``floor_ratio`` of its starting value or
    stops being positive.
    """
    ns = np.asarray(ns, dtype=np.float64)
    w = np.asarray(w_hat, dtype=np.float64)
    floor = max(w[0] * floor_ratio, 1e-300)
    usable = w > floor
    if usable.all():
        cut = w.size
    else:
        cut = int(np.argmin(usable))  # first index below the floor
    cut = max(cut, 3)
    xs, ys = ns[:cut], np.log(w[:cut])
    slope = np.polyfit(xs, ys, 1)[0]
    return float(math.exp(slope))


def calibrate_kernel_lipschitz(ctx: ModelContext, n_pairs: int = 100, seed: int = 0,
                               gap: float = 1e-3, burn_in: int = 300):
    """Calibrate the kernel-Lipschitz constant from nearby state pairs.

    The one-step kernels at two states differ only through their precision
    stages, so the L1 distance between the kernels is at most the sum of the
    exact L1 distances between the two gamma conditionals.  The calibrated
    constant is the largest observed ratio of that sum to
    ``q * r_bar^(3/2) * ||a - b||``, making the conversion factor honest on
    the sampled pairs by construction.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    anchors = stationary_proxies(ctx, burn_in, max(4, n_pairs // 8), rng)
    q, n = ctx.data.q, ctx.data.n_total
    dim = ctx.data.p + q + 1
    a1, a2 = ctx.hyper.a1, ctx.hyper.a2
    b1, b2 = ctx.hyper.b1, ctx.hyper.b2
    scale = q * ctx.design.r_bar**1.5
    worst = 0.0
    for k in range(n_pairs):
        base = anchors[k % len(anchors)].as_vector()
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        a = ChainState.from_vector(base, ctx.data.p, q)
        b = ChainState.from_vector(base + gap * direction, ctx.data.p, q)
        gp_a, rs_a = sufficient_stats(a, ctx.data)
        gp_b, rs_b = sufficient_stats(b, ctx.data)
        l1 = gamma_rate_l1_exact(q / 2 + a1, b1 + gp_a / 2, b1 + gp_b / 2)
        l1 += gamma_rate_l1_exact(n / 2 + a2, b2 + rs_a / 2, b2 + rs_b / 2)
        worst = max(worst, l1 / (scale * gap))
    return worst
