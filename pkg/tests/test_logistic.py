import numpy as np
import pytest

from gamsel.exceptions import DegenerateResponseError, InvalidInputError
from gamsel.logistic import (
    fit_path_binomial,
    majorizer,
    nll_gradient,
    penalized_nll,
    working_response,
)
from gamsel.model import Dataset, GamselState, binomial_nll, linear_predictor
from oracles import objective_by_terms, random_binomial_problem


def test_working_response_at_zero():
    y = np.array([0.0, 1.0, 1.0, 0.0])
    wr = working_response(y, np.zeros(4))
    np.testing.assert_allclose(wr.z, [-2.0, 2.0, 2.0, -2.0])
    np.testing.assert_allclose(wr.p_tilde, 0.5)


def test_working_response_clamps_probabilities():
    wr = working_response(np.array([1.0, 0.0]), np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(wr.z))
    assert wr.p_tilde[0] == pytest.approx(1e-8)


def test_working_response_rejects_non_binary():
    with pytest.raises(InvalidInputError):
        working_response(np.array([0.0, 0.5]), np.zeros(2))


def test_majorizer_bounds_nll():
    rng = np.random.default_rng(0)
    y = (rng.uniform(size=40) < 0.4).astype(float)
    for _ in range(50):
        eta_t = rng.standard_normal(40) * 2
        eta = rng.standard_normal(40) * 3
        assert majorizer(y, eta_t, eta) >= binomial_nll(y, eta) - 1e-10
        assert majorizer(y, eta_t, eta_t) == pytest.approx(binomial_nll(y, eta_t), rel=1e-12)


def test_nll_at_zero_state():
    data, bases, psi, cfg = random_binomial_problem(1)
    st = GamselState.zeros(bases)
    assert penalized_nll(st, data, bases, 2.0, cfg.gamma, psi) == pytest.approx(data.n * np.log(2.0))


def test_null_nll_identity():
    data, bases, psi, cfg = random_binomial_problem(2)
    ybar = data.y.mean()
    st = GamselState.zeros(bases, alpha0=np.log(ybar / (1 - ybar)))
    expected = -data.n * (ybar * np.log(ybar) + (1 - ybar) * np.log(1 - ybar))
    assert penalized_nll(st, data, bases, 1.0, cfg.gamma, psi) == pytest.approx(expected, rel=1e-12)


def test_penalised_nll_term_by_term():
    data, bases, psi, cfg = random_binomial_problem(3)
    rng = np.random.default_rng(3)
    st = GamselState(-0.2, rng.standard_normal(data.p), [rng.standard_normal(b.m) for b in bases])
    ref = objective_by_terms(st.alpha0, st.alpha, st.beta, data.Xs, data.y, [b.U for b in bases],
                             [b.D for b in bases], 0.6, cfg.gamma, psi, family="binomial")
    assert penalized_nll(st, data, bases, 0.6, cfg.gamma, psi) == pytest.approx(ref, rel=1e-12)


def test_nll_gradient_finite_difference():
    data, bases, psi, _ = random_binomial_problem(4)
    rng = np.random.default_rng(4)
    st = GamselState(0.1, rng.standard_normal(data.p) * 0.5, [rng.standard_normal(b.m) * 0.5 for b in bases])
    g0, ga, gb = nll_gradient(st, data, bases)
    h = 1e-6

    def f(s):
        return binomial_nll(data.y, linear_predictor(s, data.Xs, bases))

    up, dn = st.copy(), st.copy()
    up.alpha0 += h
    dn.alpha0 -= h
    assert g0 == pytest.approx((f(up) - f(dn)) / (2 * h), rel=1e-6)
    up, dn = st.copy(), st.copy()
    up.beta[1][2] += h
    dn.beta[1][2] -= h
    assert gb[1][2] == pytest.approx((f(up) - f(dn)) / (2 * h), rel=1e-6)


def test_large_lambda_gives_null_model():
    data, bases, psi, cfg = random_binomial_problem(5)
    path = fit_path_binomial(data, bases, cfg, psi)
    st = path.points[0].state
    ybar = data.y.mean()
    assert not st.alpha.any() and not any(b.any() for b in st.beta)
    assert st.alpha0 == pytest.approx(np.log(ybar / (1 - ybar)), abs=1e-6)
    # Later points pick something up.
    assert path.points[-1].state.alpha.any() or any(b.any() for b in path.points[-1].state.beta)


def test_mm_objective_is_monotone():
    data, bases, psi, cfg = random_binomial_problem(6)
    path = fit_path_binomial(data, bases, cfg, psi, mm_tol=1e-10)
    for trace in path.meta["mm_history"]:
        steps = np.diff(trace)
        assert np.all(steps <= 1e-9 * max(1.0, abs(trace[0])))
    assert path.meta["mm_capped"] == []


def test_single_class_is_degenerate():
    data, bases, psi, cfg = random_binomial_problem(7)
    ones = Dataset.from_arrays(data.X, np.ones(data.n), family="binomial")
    with pytest.raises(DegenerateResponseError):
        fit_path_binomial(ones, bases, cfg, psi)


def test_mm_cap_warns():
    data, bases, psi, cfg = random_binomial_problem(8)
    with pytest.warns(UserWarning, match="MM loop"):
        path = fit_path_binomial(data, bases, cfg, psi, max_mm=1, mm_tol=0.0)
    assert path.meta["mm_capped"]
