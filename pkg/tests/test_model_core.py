"""Core statistics against brute-force reference implementations."""

import math

import numpy as np
import pytest

from mixedgibbs import (
    ChainState,
    DatasetFormatError,
    GenConfig,
    Hyperparameters,
    MixedModelData,
    build_derived,
    check_assumptions,
    drift_value,
    generate,
    load_dataset,
    log_unnormalized_joint,
    sufficient_stats,
    write_dataset,
)


def random_instance(rng, q=3, sizes=(2, 3, 1), p=2):
    sizes = np.array(sizes, dtype=np.int64)
    n = int(sizes.sum())
    data = MixedModelData(q=q, p=p, group_sizes=sizes,
                          y=rng.standard_normal(n) * 2.0,
                          x=rng.standard_normal((n, p)))
    state = ChainState(eta00=rng.standard_normal(p), eta0=float(rng.standard_normal()),
                       eta=rng.standard_normal(q))
    return data, state


# --- brute-force reference loops ------------------------------------------

def naive_design(data):
    out = {}
    q, p = data.q, data.p
    ybar_g = np.zeros(q)
    xbar = np.zeros((q, p))
    row = 0
    xtx = np.zeros((p, p))
    xty = np.zeros(p)
    sum_y_sq = 0.0
    wss = 0.0
    for i, r in enumerate(data.group_sizes):
        block_y = data.y[row : row + r]
        block_x = data.x[row : row + r]
        ybar_g[i] = block_y.mean()
        xbar[i] = block_x.mean(axis=0)
        row += r
    for k in range(data.n_total):
        xtx += np.outer(data.x[k], data.x[k])
        xty += data.x[k] * data.y[k]
        sum_y_sq += data.y[k] ** 2
    row = 0
    for i, r in enumerate(data.group_sizes):
        for j in range(r):
            wss += (data.y[row + j] - ybar_g[i]) ** 2
        row += r
    out["ybar_g"] = ybar_g
    out["xbar"] = xbar
    out["ybar"] = ybar_g.mean()
    out["xtx"] = xtx
    out["xty"] = xty
    out["xbtxb"] = sum(
        r * np.outer(xbar[i], xbar[i]) for i, r in enumerate(data.group_sizes)
    )
    out["sum_y_sq"] = sum_y_sq
    out["wss"] = wss
    return out


def naive_stats(state, data):
    q = data.q
    gp = sum((state.eta[i] - state.eta0 / math.sqrt(q)) ** 2 for i in range(q))
    rs = 0.0
    row = 0
    for i, r in enumerate(data.group_sizes):
        for j in range(r):
            rs += (data.y[row + j] - data.x[row + j] @ state.eta00 / math.sqrt(q)
                   - state.eta[i]) ** 2
        row += r
    return gp, rs


def naive_drift(state, data):
    q = data.q
    n = data.n_total
    ybar_g = [data.y[s : s + r].mean() for s, r in zip(data.group_starts, data.group_sizes)]
    ybar = float(np.mean(ybar_g))
    t1 = 0.0
    row = 0
    for i, r in enumerate(data.group_sizes):
        for j in range(r):
            t1 += (ybar - data.x[row + j] @ state.eta00 / math.sqrt(q)) ** 2
        row += r
    t3 = sum(r * (state.eta[i] + ybar - ybar_g[i]) ** 2
             for i, r in enumerate(data.group_sizes))
    return t1 / n + state.eta0**2 / q + t3 / n


# --- build_derived ---------------------------------------------------------

def test_build_derived_singleton_groups():
    data = MixedModelData(q=2, p=1, group_sizes=np.array([1, 1]),
                          y=np.array([3.0, 5.0]), x=np.array([[0.0], [0.0]]))
    design = build_derived(data)
    assert design.ybar_groups.tolist() == [3.0, 5.0]
    assert design.ybar == 4.0
    assert design.n_total == 2 and design.r_bar == 1.0


def test_build_derived_constant_covariate():
    data = MixedModelData(q=1, p=1, group_sizes=np.array([2]),
                          y=np.array([1.0, 2.0]), x=np.array([[1.0], [1.0]]))
    design = build_derived(data)
    assert design.xtx[0, 0] == 2.0
    assert design.xbtxb[0, 0] == 2.0


def test_build_derived_matches_naive():
    rng = np.random.default_rng(11)
    data, _ = random_instance(rng)
    design = build_derived(data)
    ref = naive_design(data)
    for got, want in [
        (design.ybar_groups, ref["ybar_g"]), (design.xbar, ref["xbar"]),
        (design.xtx, ref["xtx"]), (design.xbtxb, ref["xbtxb"]),
        (design.xty, ref["xty"]),
    ]:
        np.testing.assert_allclose(got, want, rtol=1e-12)
    assert math.isclose(design.ybar, ref["ybar"], rel_tol=1e-12)
    assert math.isclose(design.sum_y_sq, ref["sum_y_sq"], rel_tol=1e-12)
    assert math.isclose(design.within_group_ss, ref["wss"], rel_tol=1e-12)


def test_non_finite_rejected_with_location():
    y = np.array([1.0, np.nan, 2.0])
    with pytest.raises(ValueError, match="group 1, row 0"):
        MixedModelData(q=2, p=1, group_sizes=np.array([1, 2]), y=y, x=np.zeros((3, 1)))


# --- sufficient_stats ------------------------------------------------------

def test_stats_perfect_fit_zero_residual():
    sizes = np.array([2, 3])
    ybar = np.array([2.0, -1.0])
    data = MixedModelData(q=2, p=1, group_sizes=sizes,
                          y=np.repeat(ybar, sizes), x=np.zeros((5, 1)))
    state = ChainState(eta00=np.zeros(1), eta0=0.0, eta=ybar)
    gp, rs = sufficient_stats(state, data)
    assert rs == 0.0


def test_stats_single_group_penalty():
    data = MixedModelData(q=1, p=1, group_sizes=np.array([1]),
                          y=np.array([0.0]), x=np.zeros((1, 1)))
    state = ChainState(eta00=np.zeros(1), eta0=1.0, eta=np.array([2.0]))
    gp, _ = sufficient_stats(state, data)
    assert gp == pytest.approx((2.0 - 1.0) ** 2, rel=1e-15)


def test_stats_match_naive():
    rng = np.random.default_rng(5)
    for _ in range(5):
        data, state = random_instance(rng)
        gp, rs = sufficient_stats(state, data)
        gp_ref, rs_ref = naive_stats(state, data)
        assert gp == pytest.approx(gp_ref, rel=1e-12)
        assert rs == pytest.approx(rs_ref, rel=1e-12)


def test_stats_invariant_to_within_group_permutation():
    rng = np.random.default_rng(17)
    data, state = random_instance(rng, sizes=(4, 3, 2))
    perm_y = data.y.copy()
    perm_x = data.x.copy()
    s = data.group_starts[0]
    order = [2, 0, 3, 1]
    perm_y[s : s + 4] = perm_y[s : s + 4][order]
    perm_x[s : s + 4] = perm_x[s : s + 4][order]
    permuted = MixedModelData(q=3, p=2, group_sizes=data.group_sizes, y=perm_y, x=perm_x)
    a = sufficient_stats(state, data)
    b = sufficient_stats(state, permuted)
    np.testing.assert_allclose(a, b, rtol=1e-12)


# --- drift function --------------------------------------------------------

def test_drift_zero_data_zero_state():
    data = MixedModelData(q=2, p=1, group_sizes=np.array([1, 2]),
                          y=np.zeros(3), x=np.zeros((3, 1)))
    state = ChainState.zeros(1, 2)
    assert drift_value(state, build_derived(data)) == 0.0


def test_drift_hand_case():
    data = MixedModelData(q=1, p=1, group_sizes=np.array([1]),
                          y=np.array([2.0]), x=np.array([[0.0]]))
    state = ChainState.zeros(1, 1)
    assert drift_value(state, build_derived(data)) == pytest.approx(4.0, rel=1e-14)


def test_drift_matches_naive():
    rng = np.random.default_rng(23)
    for _ in range(5):
        data, state = random_instance(rng)
        design = build_derived(data)
        assert drift_value(state, design) == pytest.approx(naive_drift(state, data), rel=1e-12)


def test_drift_nonnegative_and_convex():
    rng = np.random.default_rng(99)
    data, _ = random_instance(rng)
    design = build_derived(data)
    p, q = data.p, data.q
    for _ in range(1000):
        a = ChainState.from_vector(rng.standard_normal(p + q + 1) * 5, p, q)
        b = ChainState.from_vector(rng.standard_normal(p + q + 1) * 5, p, q)
        mid = ChainState.from_vector(0.5 * (a.as_vector() + b.as_vector()), p, q)
        va, vb, vm = (drift_value(s, design) for s in (a, b, mid))
        assert va >= 0 and vb >= 0
        assert vm <= 0.5 * (va + vb) + 1e-12 * (1 + va + vb)


# --- joint log density -----------------------------------------------------

HYPER = Hyperparameters(a1=1.5, b1=0.7, a2=1.2, b2=0.9)


def test_logjoint_linear_in_b1():
    rng = np.random.default_rng(31)
    data, state = random_instance(rng)
    lam, tau = 1.3, 0.8
    c = 0.37
    shifted = Hyperparameters(a1=HYPER.a1, b1=HYPER.b1 + c, a2=HYPER.a2, b2=HYPER.b2)
    base = log_unnormalized_joint(state, lam, tau, data, HYPER)
    moved = log_unnormalized_joint(state, lam, tau, data, shifted)
    assert moved - base == pytest.approx(-c * lam, rel=1e-12)


def test_logjoint_difference_identity():
    rng = np.random.default_rng(37)
    data, s1 = random_instance(rng)
    _, s2 = random_instance(rng)
    lam, tau = 0.9, 1.7
    gp1, rs1 = sufficient_stats(s1, data)
    gp2, rs2 = sufficient_stats(s2, data)
    diff = (log_unnormalized_joint(s2, lam, tau, data, HYPER)
            - log_unnormalized_joint(s1, lam, tau, data, HYPER))
    expect = -0.5 * lam * (gp2 - gp1) - 0.5 * tau * (rs2 - rs1)
    assert diff == pytest.approx(expect, rel=1e-10)


def test_logjoint_lambda_derivative():
    rng = np.random.default_rng(41)
    data, state = random_instance(rng)
    gp, _ = sufficient_stats(state, data)
    lam, tau, h = 0.8, 1.1, 1e-6
    num = (log_unnormalized_joint(state, lam + h, tau, data, HYPER)
           - log_unnormalized_joint(state, lam - h, tau, data, HYPER)) / (2 * h)
    analytic = (data.q / 2 + HYPER.a1 - 1) / lam - HYPER.b1 - gp / 2
    assert num == pytest.approx(analytic, rel=1e-6)


def test_logjoint_domain():
    rng = np.random.default_rng(43)
    data, state = random_instance(rng)
    with pytest.raises(ValueError):
        log_unnormalized_joint(state, -1.0, 1.0, data, HYPER)


def _quadratic_decomposition(data):
    """Assemble gp and rs as explicit quadratic forms over the flat state.

    Returns (G, R, s_vec, const) with gp = e'Ge and rs = e'Re - 2 s_vec'e + const
    where e is the flat state vector.  Built from the naive loops only.
    """
    p, q = data.p, data.q
    dim = p + q + 1

    def gp_of(vec):
        return naive_stats(ChainState.from_vector(vec, p, q), data)[0]

    def rs_of(vec):
        return naive_stats(ChainState.from_vector(vec, p, q), data)[1]

    zeros = np.zeros(dim)
    const = rs_of(zeros)
    G = np.zeros((dim, dim))
    R = np.zeros((dim, dim))
    basis = np.eye(dim)
    gp_e = np.array([gp_of(basis[k]) for k in range(dim)])
    rs_e = np.array([rs_of(basis[k]) for k in range(dim)])
    for k in range(dim):
        for l in range(k, dim):
            gsum = gp_of(basis[k] + basis[l])
            rsum = rs_of(basis[k] + basis[l])
            if k == l:
                G[k, k] = gp_e[k]
                # rs(e_k) = R_kk - 2 s_k + const handled below
            else:
                G[k, l] = G[l, k] = 0.5 * (gsum - gp_e[k] - gp_e[l])
                R[k, l] = R[l, k] = 0.5 * (rsum - rs_e[k] - rs_e[l] + const)
    s_vec = np.zeros(dim)
    for k in range(dim):
        # rs(e_k) = R_kk - 2 s_k + const and rs(2 e_k) = 4 R_kk - 4 s_k + const
        rs1 = rs_e[k]
        rs2 = rs_of(2.0 * basis[k])
        R[k, k] = (rs2 - 2.0 * rs1 + const) / 2.0
        s_vec[k] = (R[k, k] + const - rs1) / 2.0
    return G, R, s_vec, const


def test_logjoint_gaussian_mass_normalizes():
    """Tiny-model check that the joint density carries exactly the Gaussian
    mass an independent quadratic-form assembly predicts, and that the
    (lambda, tau) marginal normalizes under grid refinement."""
    rng = np.random.default_rng(47)
    data = MixedModelData(q=2, p=1, group_sizes=np.array([1, 1]),
                          y=rng.standard_normal(2), x=rng.standard_normal((2, 1)))
    G, R, s_vec, const = _quadratic_decomposition(data)
    dim = 4

    # pointwise: library density equals the assembled quadratic form
    for _ in range(200):
        vec = rng.standard_normal(dim) * 2
        lam, tau = rng.uniform(0.2, 3.0, size=2)
        state = ChainState.from_vector(vec, 1, 2)
        got = log_unnormalized_joint(state, lam, tau, data, HYPER)
        prior = ((data.q / 2 + HYPER.a1 - 1) * math.log(lam) - HYPER.b1 * lam
                 + (data.n_total / 2 + HYPER.a2 - 1) * math.log(tau) - HYPER.b2 * tau)
        quad = -0.5 * lam * (vec @ G @ vec) - 0.5 * tau * (vec @ R @ vec - 2 * s_vec @ vec + const)
        assert got == pytest.approx(prior + quad, rel=1e-10, abs=1e-10)

    # grid quadrature of the state-marginalized density on log axes,
    # two resolutions; the log substitution tames the density near zero
    from scipy.stats import gamma as gamma_dist

    lam_hi = gamma_dist.ppf(1 - 1e-13, data.q / 2 + HYPER.a1, scale=1 / HYPER.b1) * 2
    tau_hi = gamma_dist.ppf(1 - 1e-13, data.n_total / 2 + HYPER.a2, scale=1 / HYPER.b2) * 2

    def integral(n_pts):
        u = np.linspace(math.log(1e-8), math.log(lam_hi), n_pts)
        w = np.linspace(math.log(1e-8), math.log(tau_hi), n_pts)
        lam, tau = np.exp(u)[:, None], np.exp(w)[None, :]
        prec = lam[..., None, None] * G + tau[..., None, None] * R
        chol = np.linalg.cholesky(prec)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
        rhs = tau[..., None] * s_vec
        half = np.linalg.solve(chol, rhs[..., None])[..., 0]
        prior = ((data.q / 2 + HYPER.a1 - 1) * np.log(lam) - HYPER.b1 * lam
                 + (data.n_total / 2 + HYPER.a2 - 1) * np.log(tau) - HYPER.b2 * tau)
        log_mass = (prior - 0.5 * tau * const + 0.5 * (half**2).sum(axis=-1)
                    + 0.5 * dim * math.log(2 * math.pi) - 0.5 * logdet)
        integrand = np.exp(log_mass) * lam * tau  # jacobian of the log axes
        return np.trapezoid(np.trapezoid(integrand, w, axis=1), u)

    coarse, fine = integral(400), integral(800)
    assert coarse / fine == pytest.approx(1.0, abs=1e-4)


# --- assumption audit -------------------------------------------------------

def test_audit_balanced_m_hat_one():
    data = generate(GenConfig(q=5, p=2, r=4, seed=1))
    assert check_assumptions(data, 0.1).m_hat == 1.0


def test_audit_constant_response_energy():
    data = MixedModelData(q=2, p=1, group_sizes=np.array([2, 2]),
                          y=np.ones(4), x=np.zeros((4, 1)))
    assert check_assumptions(data, 0.1).ell_hat == pytest.approx(1.0, rel=1e-14)


def test_audit_matches_reference_eigensolver():
    data = generate(GenConfig(q=50, p=3, r=6, seed=3))
    report = check_assumptions(data, 0.1)
    ref = naive_design(data)
    scale = data.n_total
    xbar_full = np.repeat(ref["xbar"], data.group_sizes, axis=0)
    gap = (ref["xtx"] - xbar_full.T @ xbar_full) / scale
    k1_ref = np.linalg.eigvalsh(gap)[0]
    k2_ref = np.linalg.eigvalsh(ref["xtx"] / scale)[-1]
    assert report.k1_hat > 0
    assert report.k1_hat == pytest.approx(k1_ref, rel=1e-8)
    assert report.k2_hat == pytest.approx(k2_ref, rel=1e-8)


def test_audit_p_ge_n_degenerate():
    data = MixedModelData(q=2, p=3, group_sizes=np.array([1, 1]),
                          y=np.zeros(2), x=np.ones((2, 3)))
    with pytest.warns(UserWarning):
        report = check_assumptions(data, 0.1)
    assert report.k1_hat == 0.0


def test_data_facts_on_generated_datasets():
    """PSD and scalar inequalities relating group means to raw moments."""
    for seed in range(5):
        data = generate(GenConfig(q=6, p=2, r=None, delta=0.1, seed=seed,
                                  mu_true=0.3, beta_true=(0.5, -0.2)))
        design = build_derived(data)
        tol = 1e-10 * (1 + abs(design.xtx).max())
        assert np.linalg.eigvalsh(design.xtx - design.xbtxb)[0] >= -tol
        sum_xbar_sq = design.xbar.T @ design.xbar
        assert np.linalg.eigvalsh(design.xbtxb / design.r_min - sum_xbar_sq)[0] >= -tol
        assert (design.ybar_groups**2).sum() <= design.sum_y_sq / design.r_min + 1e-12
        assert design.ybar**2 <= design.sum_y_sq / (data.q * design.r_min) + 1e-12


# --- dataset CSV ------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    data = generate(GenConfig(q=4, p=2, r=3, seed=9))
    path = tmp_path / "d.csv"
    write_dataset(path, data)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.group_sizes, data.group_sizes)
    np.testing.assert_allclose(back.y, data.y, rtol=0)
    np.testing.assert_allclose(back.x, data.x, rtol=0)


def test_csv_rejects_non_contiguous(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("group,y,x1\n0,1.0,0.5\n1,2.0,0.5\n0,3.0,0.5\n")
    with pytest.raises(DatasetFormatError, match="contiguous"):
        load_dataset(path)


def test_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("grp,y,x1\n0,1.0,0.5\n")
    with pytest.raises(DatasetFormatError, match="header"):
        load_dataset(path)
