"""Curvature operator, solution-map derivative, influence functions, plug-in
covariance, degeneracy detection."""
import numpy as np
import pytest

from svmclt.derivative import (
    build_context,
    degeneracy_check,
    gateaux_fd_check,
    influence_function,
    plugin_covariance,
    s_prime,
)
from svmclt.errors import InputError
from svmclt.kernels import KernelSpec, RkhsFunction, gram, h_distance
from svmclt.losses import least_squares, logistic, make_loss
from svmclt.measures import FiniteMeasure, combine, dirac, empirical, scale
from svmclt.svm_solver import s_functional

from conftest import philox, random_measure, LOSS_CASES


def _gauss(dim=1, gamma=1.0):
    return KernelSpec("gaussian_rbf", input_dim=dim, gamma=gamma)


def _random_prob(rng, labels, max_atoms=10, max_dim=2):
    m = random_measure(rng, max_atoms=max_atoms, max_dim=max_dim, labels=labels)
    m = FiniteMeasure(m.xs, m.ys, np.abs(m.weights) + 0.05)
    return scale(m, 1.0 / m.total_mass)


def test_single_atom_curvature_matrix():
    # least squares L'' = 2, k(x0,x0) = 1, lambda0 = 1: operator is 4x identity
    ctx = build_context(dirac((0.2,), 1.0), least_squares(), _gauss(), 1.0)
    assert ctx.k_matrix.shape == (1, 1)
    assert ctx.k_matrix[0, 0] == pytest.approx(4.0, abs=1e-12)


def test_flat_loss_region_gives_scaled_identity():
    # mollified hinge: L'' vanishes away from the kink band
    loss = make_loss("mollified_hinge", eps=0.05)
    m = FiniteMeasure([[0.0], [1.5]], [1.0, 1.0], [0.5, 0.5])
    # push the solution into the flat region by a heavy penalty: f ~ 0,
    # margins y*f ~ 0 are far below 1 - eps only if ... use labels far out
    m = FiniteMeasure([[0.0], [3.0]], [1.0, -1.0], [0.5, 0.5])
    ctx = build_context(m, loss, _gauss(gamma=2.0), 5.0)
    # with lambda0 = 5 the solution is near zero, margins ~0 < 1 - eps,
    # which is inside the linear piece of the hinge: L'' = 0 there
    margins = ctx.F.ys * ctx.f_F.eval(ctx.F.xs)
    assert np.all(margins < 1.0 - 0.05 - 0.1)
    assert np.allclose(ctx.k_matrix, 2.0 * 5.0 * np.eye(2), atol=1e-12)


def test_curvature_self_adjoint_and_positive(losses):
    rng = philox(210)
    kinds = dict((n, k) for n, _, k in LOSS_CASES)
    for trial in range(100):
        name = list(losses)[trial % len(losses)]
        P = _random_prob(rng, kinds[name], max_atoms=8)
        lam0 = float(10 ** rng.uniform(-1, 0.3))
        ctx = build_context(P, losses[name], _gauss(dim=P.dim, gamma=float(rng.uniform(0.3, 2.0))), lam0)
        G, Kc = ctx.gram_matrix, ctx.k_matrix
        GK = G @ Kc
        sym_err = np.max(np.abs(GK - GK.T))
        assert sym_err <= 1e-9 * max(1.0, np.max(np.abs(GK)))
        # <h, K h> >= 2*lambda0*||h||^2 for random directions
        for _ in range(3):
            beta = rng.normal(size=Kc.shape[0])
            lhs = float(beta @ GK @ beta)
            h2 = float(beta @ G @ beta)
            assert lhs >= 2.0 * lam0 * h2 - 1e-9 * max(1.0, abs(lhs))


def test_curvature_quadratic_form_termwise():
    # <h, K h> - 2*lambda0*||h||^2 equals the F-integral of L'' h^2
    rng = philox(211)
    P = _random_prob(rng, "regression", max_atoms=7)
    lam0 = 0.6
    k = _gauss(dim=P.dim, gamma=0.7)
    ctx = build_context(P, least_squares(), k, lam0)
    G = ctx.gram_matrix
    for _ in range(10):
        beta = rng.normal(size=G.shape[0])
        h_at_atoms = (G @ beta)[ctx._atom_anchor_idx]
        lhs = float(beta @ G @ ctx.k_matrix @ beta) - 2.0 * lam0 * float(beta @ G @ beta)
        d2 = least_squares().d2(P.xs, P.ys, ctx.f_F.eval(P.xs))
        rhs = float(P.weights @ (d2 * h_at_atoms ** 2))
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


def test_s_prime_zero_direction():
    ctx = build_context(dirac((0.0,), 1.0), least_squares(), _gauss(), 1.0)
    zero = combine(dirac((0.0,), 1.0), dirac((0.0,), 1.0), 1.0, -1.0)
    out = s_prime(ctx, zero)
    assert out.norm_h() == 0.0


def test_s_prime_closed_form_chain():
    # f(x0) = 0.5, L'(1, 0.5) = -1, u = -Phi(x0), S' = K^{-1}Phi = 0.25 Phi
    ctx = build_context(dirac((0.2,), 1.0), least_squares(), _gauss(), 1.0)
    out = s_prime(ctx, dirac((0.2,), 1.0))
    assert out.anchors.shape == (1, 1)
    assert out.coefficients[0] == pytest.approx(0.25, abs=1e-12)


def test_s_prime_linear_in_direction(losses):
    rng = philox(212)
    kinds = dict((n, k) for n, _, k in LOSS_CASES)
    for name, loss in losses.items():
        P = _random_prob(rng, kinds[name], max_atoms=6, max_dim=1)
        ctx = build_context(P, loss, _gauss(dim=P.dim), 0.8)
        g1 = random_measure(rng, max_atoms=4, max_dim=1)
        g2 = random_measure(rng, max_atoms=4, max_dim=1)
        a, b = float(rng.normal()), float(rng.normal())
        lhs = s_prime(ctx, combine(g1, g2, a, b))
        from svmclt.kernels import rkhs_lincomb

        rhs = rkhs_lincomb(ctx.kernel, [(a, s_prime(ctx, g1)), (b, s_prime(ctx, g2))])
        denom = max(1.0, lhs.norm_h())
        assert h_distance(lhs, rhs) <= 1e-9 * denom


def test_s_prime_extends_anchor_set():
    ctx = build_context(dirac((0.0,), 1.0), least_squares(), _gauss(), 1.0)
    out = s_prime(ctx, dirac((2.0,), 1.0))
    assert out.anchors.shape[0] == 2
    assert out.norm_h() > 0.0


def test_influence_zero_at_own_single_atom():
    ctx = build_context(dirac((0.4,), 0.7), least_squares(), _gauss(), 1.0)
    out = influence_function(ctx, ((0.4,), 0.7))
    assert out.norm_h() == pytest.approx(0.0, abs=1e-15)


def test_influence_requires_probability():
    m = scale(dirac((0.0,), 1.0), 2.0)
    ctx = build_context(m, least_squares(), _gauss(), 1.0)
    with pytest.raises(InputError):
        influence_function(ctx, ((0.0,), 1.0))


def test_influence_zero_mean_under_p():
    rng = philox(213)
    P = _random_prob(rng, "regression", max_atoms=8, max_dim=1)
    ctx = build_context(P, least_squares(), _gauss(dim=1, gamma=0.9), 0.5)
    from svmclt.kernels import rkhs_lincomb

    parts = [(float(P.weights[i]), influence_function(ctx, (P.xs[i], P.ys[i])))
             for i in range(P.n_atoms)]
    total = rkhs_lincomb(ctx.kernel, parts)
    assert total.norm_h() <= 1e-9


def test_influence_leave_one_out_proxy():
    # removing one sample changes the solution by about -IF(z_i)/n
    rng = philox(214)
    n = 50
    xs = rng.normal(size=(n, 1))
    ys = 0.8 * rng.normal(size=n)
    P = empirical(list(zip(xs, ys)))
    assert P.n_atoms == n
    k = _gauss(gamma=0.8)
    lam0 = 0.4
    ctx = build_context(P, least_squares(), k, lam0)
    f_full = ctx.f_F
    for i in (0, 17, 42):
        keep = np.ones(n, dtype=bool)
        keep[i] = False
        P_minus = FiniteMeasure(xs[keep], ys[keep], np.full(n - 1, 1.0 / (n - 1)))
        f_minus = s_functional(P_minus, least_squares(), k, lam0)
        inf_i = influence_function(ctx, (xs[i], ys[i]))
        from svmclt.kernels import rkhs_lincomb

        # S(P_minus) - S(P) should be close to -IF(z_i)/(n-1)
        step = rkhs_lincomb(k, [(1.0, f_minus), (-1.0, f_full),
                                (1.0 / (n - 1), inf_i)])
        assert step.norm_h() <= 0.1 * inf_i.norm_h() / (n - 1)


def test_gateaux_fd_first_order():
    rng = philox(215)
    P = _random_prob(rng, "regression", max_atoms=5, max_dim=1)
    ctx = build_context(P, least_squares(), _gauss(gamma=1.1), 0.7)
    z = (np.array([0.3]), 0.9)
    G = combine(dirac(z[0], z[1]), P, 1.0, -1.0)
    rep = gateaux_fd_check(ctx, G, (1e-1, 1e-2, 1e-3))
    e = np.asarray(rep.errors)
    assert np.all(np.diff(e) < 0)
    assert e[2] <= 0.1 * e[0]
    assert rep.slope >= 0.9
    assert rep.hadamard_errors is not None
    assert rep.hadamard_errors[-1] <= rep.hadamard_errors[0]


def test_gateaux_zero_direction():
    P = empirical([((0.0,), 1.0), ((1.0,), -1.0)])
    ctx = build_context(P, least_squares(), _gauss(), 1.0)
    zero = combine(P, P, 1.0, -1.0)
    rep = gateaux_fd_check(ctx, zero, (1e-1, 1e-2), drift=False)
    assert all(v == 0.0 for v in rep.errors)


def test_gateaux_quadratic_remainder_scaling():
    rng = philox(216)
    P = _random_prob(rng, "regression", max_atoms=5, max_dim=1)
    ctx = build_context(P, least_squares(), _gauss(gamma=0.9), 0.8)
    G = combine(dirac((0.5,), 1.2), P, 1.0, -1.0)
    G2 = scale(G, 2.0)
    t = 1e-3
    e1 = gateaux_fd_check(ctx, G, (t,), drift=False).errors[0]
    e2 = gateaux_fd_check(ctx, G2, (t,), drift=False).errors[0]
    # remainder is quadratic in the direction: doubling G scales e by ~4
    assert e2 / e1 == pytest.approx(4.0, rel=3.0)
    assert 1.0 <= e2 / e1 <= 16.0


def test_gateaux_cone_violation_names_t():
    P = empirical([((0.0,), 1.0), ((1.0,), -1.0)])
    ctx = build_context(P, least_squares(), _gauss(), 1.0)
    G = scale(P, -1.0)  # F + t*G = (1-t)F stays nonnegative; try t > 1
    with pytest.raises(InputError, match="2.0"):
        gateaux_fd_check(ctx, G, (0.5, 2.0), drift=False)


def test_plugin_dirac_degenerate_covariance():
    ctx = build_context(dirac((0.1,), 1.0), least_squares(), _gauss(), 1.0)
    est = plugin_covariance(ctx, [(0.1,), (0.8,)])
    assert np.all(est.sigma_matrix == 0.0)
    assert est.risk_sigma == 0.0


def test_plugin_symmetry_and_psd():
    rng = philox(217)
    for _ in range(10):
        P = _random_prob(rng, "regression", max_atoms=7, max_dim=1)
        ctx = build_context(P, least_squares(), _gauss(gamma=0.8), 0.6)
        grid = rng.uniform(-2, 2, size=(4, 1))
        est = plugin_covariance(ctx, grid)
        S = est.sigma_matrix
        assert np.array_equal(S, S.T)
        evals = np.linalg.eigvalsh(S)
        assert evals.min() >= -1e-9 * max(1.0, np.abs(evals).max())
        assert est.risk_sigma >= 0.0


def test_plugin_two_atom_brute_force_oracle():
    # independent assembly of the same covariance on a 2-atom measure
    x = np.array([[0.0], [1.0]])
    y = np.array([0.7, -0.4])
    w = np.array([0.3, 0.7])
    P = FiniteMeasure(x, y, w)
    k = _gauss(gamma=0.9)
    lam0 = 0.8
    K = gram(k, x)

    # closed-form least squares solve: (diag(2w)K + 2*lam0*I) a = 2w*y
    A = np.diag(2.0 * w) @ K + 2.0 * lam0 * np.eye(2)
    a = np.linalg.solve(A, 2.0 * w * y)
    fvals = K @ a
    d1 = -2.0 * (y - fvals)
    d2 = np.full(2, 2.0)

    # curvature matrix and grid directions by hand
    Kc = 2.0 * lam0 * np.eye(2) + (w * d2)[:, None] * K
    H = np.linalg.solve(Kc, np.eye(2))  # h_i coefficients, columns
    hvals = K @ H  # h_i evaluated at the two atoms
    g = d1[:, None] * hvals  # g_i(atom a) in rows a, columns i
    mean_g = w @ g
    sigma_oracle = (g * w[:, None]).T @ g - np.outer(mean_g, mean_g)

    ctx = build_context(P, least_squares(), k, lam0)
    est = plugin_covariance(ctx, x)
    assert np.allclose(est.sigma_matrix, sigma_oracle, atol=1e-10)

    # risk sigma by the same hand assembly
    u = w * d1
    hu = np.linalg.solve(Kc, u)
    gu = d1 * (K @ hu)
    var_u = float(w @ gu ** 2 - (w @ gu) ** 2)
    assert est.risk_sigma == pytest.approx(np.sqrt(max(var_u, 0.0)), abs=1e-10)


def test_degeneracy_dirac():
    ctx = build_context(dirac((0.0,), 1.0), least_squares(), _gauss(), 1.0)
    rep = degeneracy_check(ctx)
    assert rep.degenerate
    assert rep.max_sigma2 <= rep.threshold


def test_degeneracy_two_labels_one_location():
    # same x, y = +-1: f = 0 by symmetry, L' = -+2 varies across atoms
    P = FiniteMeasure([[0.0], [0.0]], [1.0, -1.0], [0.5, 0.5])
    ctx = build_context(P, least_squares(), _gauss(), 1.0)
    assert abs(ctx.f_F.eval((0.0,))) <= 1e-12
    rep = degeneracy_check(ctx)
    assert not rep.degenerate
    assert rep.max_sigma2 > rep.threshold


def test_degeneracy_flat_loss_all_labels_inside_band():
    # labels within the insensitivity width: zero function is exactly
    # optimal and the loss derivative vanishes at every atom
    loss = make_loss("mollified_eps_insensitive", eps_ins=0.5, eps=0.05)
    P = FiniteMeasure([[0.0], [1.0]], [0.2, -0.3], [0.5, 0.5])
    ctx = build_context(P, loss, _gauss(), 1.0)
    assert np.max(np.abs(ctx.f_F.eval(P.xs))) <= 1e-9
    rep = degeneracy_check(ctx)
    assert rep.degenerate
