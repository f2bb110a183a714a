import numpy as np
import pytest

from gamsel.exceptions import ConvergenceError, DegenerateResponseError, InvalidInputError
from gamsel.model import Dataset, GamselConfig, GamselState, linear_predictor
from gamsel.fitting import build_bases, calibrate_psis
from gamsel.optimizer import (
    BlockCoordinateDescent,
    fit_path_gaussian,
    joint_update,
    kkt_check,
    lambda_max,
    make_lambda_grid,
    soft_threshold,
    solve_norm_equation,
    strong_rule_screen,
    update_alpha,
    update_beta,
)
from oracles import beta_objective, beta_subproblem_fista, bisect_root, random_gaussian_problem


# -- scalar pieces ----------------------------------------------------------


@pytest.mark.parametrize("z, t, expected", [(3.0, 1.0, 2.0), (-0.5, 1.0, 0.0), (-2.5, 1.0, -1.5), (0.7, 0.0, 0.7)])
def test_soft_threshold(z, t, expected):
    assert soft_threshold(z, t) == pytest.approx(expected)


def test_soft_threshold_negative_threshold():
    with pytest.raises(InvalidInputError):
        soft_threshold(1.0, -0.1)


def test_update_alpha_cases():
    x = np.array([0.6, 0.8, 0.0])
    assert update_alpha(x, np.array([0.8, -0.6, 5.0]), 0.1) == 0.0  # orthogonal residual
    r = 5.0 * x
    assert update_alpha(x, r, 2.0) == pytest.approx(3.0)
    assert update_alpha(x, r, 0.0) == pytest.approx(5.0)


def test_norm_equation_isotropic():
    g = np.array([3.0, 4.0])
    assert solve_norm_equation(g, np.ones(2), 1.5) == pytest.approx(5.0 - 1.5, rel=1e-12)


def test_norm_equation_against_bisection():
    g, Dt, lt = np.array([1.0, 0.5]), np.array([1.0, 2.0]), 0.4
    c = solve_norm_equation(g, Dt, lt)

    def F(c):
        return np.sum((g / (Dt * c + lt)) ** 2) - 1.0

    assert c == pytest.approx(bisect_root(F, 0.0, 10.0), abs=1e-9)


def test_norm_equation_precondition():
    with pytest.raises(InvalidInputError):
        solve_norm_equation(np.array([0.1, 0.1]), np.ones(2), 1.0)
    with pytest.raises(InvalidInputError):
        solve_norm_equation(np.array([3.0, 3.0]), np.array([1.0, 0.0]), 1.0)


# -- beta and joint updates -------------------------------------------------


def _orthonormal(rng, n, m):
    return np.linalg.qr(rng.standard_normal((n, m)))[0]


def test_update_beta_zero_branch():
    rng = np.random.default_rng(0)
    U = _orthonormal(rng, 20, 4)
    D = np.array([0.0, 1.0, 3.0, 8.0])
    Ds = np.r_[1.0, D[1:]]
    r = rng.standard_normal(20)
    lam_t = np.linalg.norm(U.T @ r / np.sqrt(Ds)) / 0.9
    np.testing.assert_array_equal(update_beta(U, r, D, 0.5, lam_t), 0.0)


def test_update_beta_isotropic_is_group_soft_threshold():
    rng = np.random.default_rng(1)
    U = _orthonormal(rng, 15, 3)
    r = rng.standard_normal(15)
    v = U.T @ r
    lam_t = 0.3 * np.linalg.norm(v)
    D = np.array([0.0, 1.0, 1.0])  # D* = I
    np.testing.assert_allclose(update_beta(U, r, D, 0.0, lam_t), (1 - lam_t / np.linalg.norm(v)) * v, rtol=1e-12)


def test_update_beta_matches_subproblem_oracle():
    rng = np.random.default_rng(2)
    Dstar = np.array([1.0, 1.0, 2.5])
    D = np.array([0.0, 1.0, 2.5])
    U = _orthonormal(rng, 25, 3)
    for _ in range(20):
        r = rng.standard_normal(25)
        lam_t = rng.uniform(0.05, 1.0)
        b = update_beta(U, r, D, 0.7, lam_t)
        v = U.T @ r
        ref = beta_subproblem_fista(v[None], Dstar[None], D[None], np.array([0.7]), np.array([lam_t]))[0]
        f = beta_objective(b, v, Dstar, D, 0.7, lam_t)
        f_ref = beta_objective(ref, v, Dstar, D, 0.7, lam_t)
        assert f <= f_ref + 1e-10
        np.testing.assert_allclose(b, ref, atol=1e-6)


def _joint_objective(a, b, w, Dstar, D, psi, ga, lt):
    e = w.copy()
    e[0] -= a
    return (0.5 * np.sum((e - b) ** 2) + ga * abs(a) + lt * np.sqrt(np.sum(Dstar * b * b))
            + 0.5 * psi * np.sum(D * b * b))


def _joint_oracle(w, Dstar, D, psi, ga, lt, iters=20000):
    """Plain proximal gradient on (a, theta) with theta = sqrt(D*) b."""
    s = np.sqrt(Dstar)
    L = 2.0 * max(1.0, (1.0 / Dstar).max()) + psi * (D / Dstar).max()
    a, th = 0.0, np.zeros_like(w)
    for _ in range(iters):
        b = th / s
        e = w.copy()
        e[0] -= a
        res = e - b
        ga_grad = -res[0]
        th_grad = -res / s + psi * D * b / s
        a = soft_threshold(a - ga_grad / L, ga / L)
        z = th - th_grad / L
        nz = np.linalg.norm(z)
        th = z * max(0.0, 1.0 - lt / L / nz) if nz > 0 else z
    return a, th / s


def test_joint_update_matches_oracle():
    rng = np.random.default_rng(3)
    D = np.array([0.0, 1.0, 2.0, 6.0])
    Dstar = np.r_[1.0, D[1:]]
    worst = 0.0
    for trial in range(30):
        w = rng.standard_normal(4) * 2
        ga, lt = rng.uniform(0.0, 1.5, size=2)
        psi = rng.uniform(0.0, 2.0)
        a, b = joint_update(w, Dstar, D, psi, ga, lt)
        a_ref, b_ref = _joint_oracle(w, Dstar, D, psi, ga, lt)
        f = _joint_objective(a, b, w, Dstar, D, psi, ga, lt)
        f_ref = _joint_objective(a_ref, b_ref, w, Dstar, D, psi, ga, lt)
        worst = max(worst, f - f_ref)
    assert worst < 1e-9


# -- lambda grid ------------------------------------------------------------


def test_lambda_max_single_variable():
    rng = np.random.default_rng(4)
    X = rng.uniform(size=(40, 1))
    y = np.sin(4 * X[:, 0]) + 0.1 * rng.standard_normal(40)
    data = Dataset.from_arrays(X, y)
    cfg = GamselConfig(gamma=0.5, degrees=6, dfs=4.0)
    bases = build_bases(data, cfg)
    yc = y - y.mean()
    expected = max(2 * abs(data.Xs[:, 0] @ yc), 2 * np.linalg.norm(bases[0].U.T @ yc))
    assert lambda_max(data.Xs, y, bases, 0.5, weighted=False) == pytest.approx(expected)
    assert lambda_max(data.Xs, y, bases, 0.5) <= expected + 1e-12


def test_fit_at_lambda_max_is_zero():
    data, bases, psi, cfg = random_gaussian_problem(5)
    path = fit_path_gaussian(data, bases, cfg, psi)
    st = path.points[0].state
    assert not st.alpha.any() and not any(b.any() for b in st.beta)
    assert st.alpha0 == pytest.approx(data.y.mean())
    assert kkt_check(st, data.Xs, data.y, bases, path.points[0].lam, cfg.gamma, psi).ok()


def test_lambda_grid():
    np.testing.assert_array_equal(make_lambda_grid(3.0, 1), [3.0])
    g = make_lambda_grid(2.0, 50, 0.01)
    np.testing.assert_allclose(g[1:] / g[:-1], 0.01 ** (1 / 49), rtol=1e-12)
    assert g[0] == 2.0 and g[-1] == pytest.approx(0.02)
    assert make_lambda_grid(2.0, 5, 0.1, append_zero=True)[-1] == 0.0


def test_non_decreasing_grid_rejected():
    data, bases, psi, cfg = random_gaussian_problem(6)
    with pytest.raises(InvalidInputError):
        fit_path_gaussian(data, bases, cfg, psi, lambdas=[1.0, 1.0])


def test_constant_response_is_degenerate():
    data, bases, psi, cfg = random_gaussian_problem(6)
    flat = Dataset.from_arrays(data.X, np.full(data.n, 2.0))
    with pytest.raises(DegenerateResponseError):
        fit_path_gaussian(flat, bases, cfg, psi)


# -- screening --------------------------------------------------------------


def test_strong_rule_equal_lambdas_is_dual_feasibility():
    data, bases, psi, cfg = random_gaussian_problem(7)
    lam = 0.5 * lambda_max(data.Xs, data.y, bases, cfg.gamma)
    r = data.y - data.y.mean()
    beta0 = [np.zeros(b.m) for b in bases]
    keep_a, keep_b = strong_rule_screen(lam, lam, r, data.Xs, bases, cfg.gamma, psi, beta0)
    np.testing.assert_array_equal(keep_a, np.abs(data.Xs.T @ r) >= cfg.gamma * lam)
    norms = np.array([np.linalg.norm(b.U.T @ r) for b in bases])
    np.testing.assert_array_equal(keep_b, norms >= (1 - cfg.gamma) * lam)


def test_noise_variable_screened_but_path_unchanged():
    rng = np.random.default_rng(8)
    n = 80
    X = rng.uniform(size=(n, 4))
    y = 3 * X[:, 0] + np.sin(6 * X[:, 1]) + 0.2 * rng.standard_normal(n)
    X[:, 3] = rng.uniform(size=n) * 1e-3 + X[:, 3] * 0  # unrelated, tiny-gradient column
    data = Dataset.from_arrays(X, y)
    cfg = GamselConfig(degrees=6, dfs=4.0, num_lambda=15)
    bases = build_bases(data, cfg)
    psi = calibrate_psis(bases, cfg.dfs_for(4))
    lmax = lambda_max(data.Xs, y, bases, cfg.gamma)
    keep_a, keep_b = strong_rule_screen(0.9 * lmax, lmax, y - y.mean(), data.Xs, bases, cfg.gamma, psi,
                                        [np.zeros(b.m) for b in bases])
    assert not keep_a[3] and not keep_b[3]
    kw = dict(tol=1e-11)
    on = fit_path_gaussian(data, bases, cfg, psi, screen=True, **kw)
    off = fit_path_gaussian(data, bases, cfg, psi, screen=False, **kw)
    for a, b in zip(on.points, off.points):
        np.testing.assert_allclose(a.state.alpha, b.state.alpha, atol=1e-9)
        for x, z in zip(a.state.beta, b.state.beta):
            np.testing.assert_allclose(x, z, atol=1e-9)


# -- path behaviour ---------------------------------------------------------


def test_unpenalised_linear_fit_at_zero_lambda():
    rng = np.random.default_rng(9)
    X = rng.uniform(size=(50, 3))
    y = 2.0 - 1.5 * X[:, 1]
    data = Dataset.from_arrays(X, y)
    cfg = GamselConfig(degrees=5, dfs=3.0, num_lambda=10)
    bases = build_bases(data, cfg)
    psi = calibrate_psis(bases, cfg.dfs_for(3))
    path = fit_path_gaussian(data, bases, cfg, psi, append_zero=True, tol=1e-12)
    assert path.points[-1].lam == 0.0
    fitted = linear_predictor(path.points[-1].state, data.Xs, bases)
    np.testing.assert_allclose(fitted, y, atol=1e-8)


def test_residual_is_maintained_exactly():
    data, bases, psi, cfg = random_gaussian_problem(10)
    worst = []

    def monitor(engine, event, j):
        worst.append(np.abs(engine.r - engine.residual_from_scratch()).max())

    fit_path_gaussian(data, bases, cfg, psi, monitor=monitor)
    assert worst and max(worst) < 1e-10


def test_kkt_detects_perturbation():
    data, bases, psi, cfg = random_gaussian_problem(11)
    path = fit_path_gaussian(data, bases, cfg, psi, tol=1e-10)
    pt = path.points[-1]
    assert kkt_check(pt.state, data.Xs, data.y, bases, pt.lam, cfg.gamma, psi).max < 1e-6
    st = pt.state.copy()
    j = int(np.flatnonzero(st.alpha)[0])
    st.alpha[j] += 1e-3
    rep = kkt_check(st, data.Xs, data.y, bases, pt.lam, cfg.gamma, psi)
    assert rep.alpha[j] > 1e-6


def test_convergence_failure_carries_lambda_index():
    data, bases, psi, cfg = random_gaussian_problem(12)
    with pytest.raises(ConvergenceError) as info:
        fit_path_gaussian(data, bases, cfg, psi, max_iter=1, tol=1e-15)
    assert "sweeps" in str(info.value)


def test_warm_start_engine_resolves_same_lambda():
    data, bases, psi, cfg = random_gaussian_problem(13)
    engine = BlockCoordinateDescent(data.Xs, bases, psi, cfg.gamma, tol=1e-10)
    engine.set_response(data.y)
    lam = 0.3 * lambda_max(data.Xs, data.y, bases, cfg.gamma)
    engine.solve(lam)
    first = engine.current_state()
    assert engine.solve(lam) <= 2
    np.testing.assert_allclose(engine.state.alpha, first.alpha, atol=1e-12)


@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_extreme_gamma(gamma):
    data, bases, psi, _ = random_gaussian_problem(14)
    cfg = GamselConfig(gamma=gamma, degrees=6, dfs=4.0, num_lambda=10)
    path = fit_path_gaussian(data, bases, cfg, psi)
    st = path.points[-1].state
    if gamma == 1.0:
        assert not any(b.any() for b in st.beta)
        assert st.alpha.any()
    else:
        assert not st.alpha.any()
        assert any(b.any() for b in st.beta)
    assert isinstance(st, GamselState)
