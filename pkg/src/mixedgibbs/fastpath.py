"""Compiled chain driver for long runs and timing studies.

The numpy transition in ``gibbs_kernel`` is the reference implementation;
its per-iteration cost is dominated by interpreter and BLAS call overhead
once N is small.  For chains of many iterations, and for wall-time scaling
measurements where that overhead would mask the O(N p) data pass, this
module provides a numba-compiled driver that performs the identical update
arithmetic on flat arrays.  Agreement with the reference path is covered by
tests; when numba is unavailable the driver falls back to the reference
loop.

Noise layout: the driver consumes pre-drawn noise blocks, one gamma vector
per precision and an (iters, p + 1 + q) normal block, applied in the same
per-iteration order as the reference path (j1, j2, n00, n0, n1..nq).
"""

from __future__ import annotations

import math

import numpy as np

from .model_core import ChainState, ModelContext, drift_value

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


__all__ = ["HAVE_NUMBA", "run_chain_fast", "predraw_noise"]


@njit(cache=True)
def _chain_kernel(
    x, y, sizes, starts, xbar, ybar_g, ybar, sum_x, xtx, xty,
    b1, b2, state, j1s, j2s, normals, out_lt, out_v, out_states, record_states,
):
    n_iters = j1s.shape[0]
    p = xtx.shape[0]
    q = sizes.shape[0]
    n = y.shape[0]
    sq = math.sqrt(q)

    w = np.empty(p)
    t = np.empty(q)
    c = np.empty(q)
    wx = np.empty(p)
    amat = np.empty((p, p))
    chol = np.empty((p, p))
    rhs = np.empty(p)
    v = np.empty(p)
    eta00 = np.empty(p)
    d = np.empty(q)

    for k in range(n_iters):
        # sufficient statistics of the current state
        gp = 0.0
        for i in range(q):
            dv = state[p + 1 + i] - state[p] / sq
            gp += dv * dv
        for j in range(p):
            w[j] = state[j] / sq
        rs = 0.0
        for i in range(q):
            ei = state[p + 1 + i]
            for row in range(starts[i], starts[i] + sizes[i]):
                pred = 0.0
                for j in range(p):
                    pred += x[row, j] * w[j]
                e = y[row] - pred - ei
                rs += e * e

        lam = j1s[k] / (b1 + 0.5 * gp)
        tau = j2s[k] / (b2 + 0.5 * rs)

        # per-group weights and p-dimensional aggregates
        s0 = 0.0
        wy = 0.0
        for j in range(p):
            wx[j] = 0.0
        for a in range(p):
            for b in range(p):
                amat[a, b] = 0.0
        for j in range(p):
            rhs[j] = 0.0
        sum_dz = 0.0
        sum_iz = 0.0
        for i in range(q):
            ri = sizes[i]
            ti = lam + ri * tau
            ci = ri * tau / ti
            t[i] = ti
            c[i] = ci
            rem = ri * (1.0 - ci)
            s0 += rem
            wy += rem * ybar_g[i]
            cri = ci * ri
            for a in range(p):
                wx[a] += rem * xbar[i, a]
                rhs[a] += cri * ybar_g[i] * xbar[i, a]
                for b in range(p):
                    amat[a, b] += cri * xbar[i, a] * xbar[i, b]
        for a in range(p):
            for b in range(p):
                amat[a, b] = xtx[a, b] - (amat[a, b] + wx[a] * wx[b] / s0)
        for a in range(p):
            rhs[a] = xty[a] - (rhs[a] + wx[a] * wy / s0)

        # Cholesky of the regression-block precision, then v and eta00
        for a in range(p):
            for b in range(a + 1):
                acc = amat[a, b]
                for m in range(b):
                    acc -= chol[a, m] * chol[b, m]
                if a == b:
                    chol[a, a] = math.sqrt(acc)
                else:
                    chol[a, b] = acc / chol[b, b]
        for a in range(p):
            acc = rhs[a]
            for m in range(a):
                acc -= chol[a, m] * v[m]
            v[a] = acc / chol[a, a]
        for a in range(p - 1, -1, -1):
            acc = v[a]
            for m in range(a + 1, p):
                acc -= chol[m, a] * v[m]
            v[a] = acc / chol[a, a]
        for a in range(p):
            v[a] *= sq
        scale00 = math.sqrt(q / tau)
        for a in range(p - 1, -1, -1):
            acc = normals[k, a]
            for m in range(a + 1, p):
                acc -= chol[m, a] * eta00[m]
            eta00[a] = acc / chol[a, a]
        for a in range(p):
            eta00[a] = v[a] + scale00 * eta00[a]

        # eta0 and the group effects
        for i in range(q):
            pred = 0.0
            for j in range(p):
                pred += xbar[i, j] * eta00[j]
            d[i] = ybar_g[i] - pred / sq
            zi = t[i] / (sizes[i] * lam * tau)
            sum_dz += d[i] / zi
            sum_iz += 1.0 / zi
        eta0 = sq * sum_dz / sum_iz + math.sqrt(q / sum_iz) * normals[k, p]
        for i in range(q):
            state[p + 1 + i] = (
                (lam / t[i]) * (eta0 / sq)
                + c[i] * d[i]
                + normals[k, p + 1 + i] / math.sqrt(t[i])
            )
        for j in range(p):
            state[j] = eta00[j]
        state[p] = eta0

        # drift value of the new state
        t1 = ybar * ybar
        sxw = 0.0
        qf = 0.0
        for a in range(p):
            wa = eta00[a] / sq
            sxw += sum_x[a] * wa
            for b in range(p):
                qf += wa * xtx[a, b] * (eta00[b] / sq)
        t1 += (-2.0 * ybar * sxw + qf) / n
        if t1 < 0.0:
            t1 = 0.0
        t3 = 0.0
        for i in range(q):
            dev = state[p + 1 + i] + ybar - ybar_g[i]
            t3 += sizes[i] * dev * dev
        out_lt[k, 0] = lam
        out_lt[k, 1] = tau
        out_v[k] = t1 + eta0 * eta0 / q + t3 / n
        if record_states:
            for j in range(p + q + 1):
                out_states[k, j] = state[j]


def predraw_noise(rng: np.random.Generator, ctx: ModelContext, n_iters: int):
    """Draw the noise blocks for ``n_iters`` transitions in driver layout."""
    data, hyper = ctx.data, ctx.hyper
    j1s = rng.standard_gamma(data.q / 2 + hyper.a1, size=n_iters)
    j2s = rng.standard_gamma(data.n_total / 2 + hyper.a2, size=n_iters)
    normals = rng.standard_normal((n_iters, data.p + 1 + data.q))
    return j1s, j2s, normals


def run_chain_fast(
    state: ChainState,
    n_iters: int,
    rng: np.random.Generator,
    ctx: ModelContext,
    record_states: bool = False,
    noise=None,
):
    """Run ``n_iters`` transitions with the compiled kernel.

    Returns the same tuple as ``gibbs_kernel.run_chain``.  ``noise`` may
    supply explicit pre-drawn blocks ``(j1s, j2s, normals)``, which is how
    the equivalence tests drive both paths with identical randomness.
    """
    data, design = ctx.data, ctx.design
    p, q = data.p, data.q
    if noise is None:
        noise = predraw_noise(rng, ctx, n_iters)
    j1s, j2s, normals = noise
    if not HAVE_NUMBA:
        return _fallback_loop(state, ctx, j1s, j2s, normals, record_states)
    flat = state.as_vector()
    out_lt = np.empty((n_iters, 2))
    out_v = np.empty(n_iters)
    out_states = np.empty((n_iters, p + q + 1)) if record_states else np.empty((1, 1))
    _chain_kernel(
        data.x, data.y, data.group_sizes, data.group_starts,
        design.xbar, design.ybar_groups, design.ybar, design.sum_x,
        design.xtx, design.xty,
        ctx.hyper.b1, ctx.hyper.b2,
        flat, np.ascontiguousarray(j1s), np.ascontiguousarray(j2s),
        np.ascontiguousarray(normals),
        out_lt, out_v, out_states, record_states,
    )
    final = ChainState.from_vector(flat, p, q)
    return final, out_lt, out_v, (out_states if record_states else None)


def _fallback_loop(state, ctx, j1s, j2s, normals, record_states):
    from .gibbs_kernel import NoiseDraw, random_map

    p, q = ctx.data.p, ctx.data.q
    n_iters = len(j1s)
    out_lt = np.empty((n_iters, 2))
    out_v = np.empty(n_iters)
    out_states = np.empty((n_iters, p + q + 1)) if record_states else None
    for k in range(n_iters):
        noise = NoiseDraw(
            n00=normals[k, :p], n0=float(normals[k, p]), ni=normals[k, p + 1 :],
            j1=float(j1s[k]), j2=float(j2s[k]),
        )
        from .model_core import sufficient_stats

        gp, rs = sufficient_stats(state, ctx.data)
        out_lt[k, 0] = noise.j1 / (ctx.hyper.b1 + 0.5 * gp)
        out_lt[k, 1] = noise.j2 / (ctx.hyper.b2 + 0.5 * rs)
        state = random_map(state, noise, ctx)
        out_v[k] = drift_value(state, ctx.design)
        if record_states:
            out_states[k] = state.as_vector()
    return state, out_lt, out_v, out_states
