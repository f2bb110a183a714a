import numpy as np
import pytest

from gamsel.exceptions import InvalidInputError, OutOfRangeError
from gamsel.fitting import fit
from gamsel.model import (
    Dataset,
    GamselConfig,
    GamselState,
    TermClass,
    classify_term,
    linear_predictor,
    objective,
    predict,
    term_df,
)
from oracles import objective_by_terms, random_gaussian_problem


# -- configuration and data -------------------------------------------------


@pytest.mark.parametrize("kw", [dict(gamma=-0.1), dict(gamma=1.5), dict(degrees=1), dict(num_lambda=0), dict(lambda_min_ratio=0.0),
                                dict(lambda_min_ratio=1.0)])
def test_config_ranges(kw):
    with pytest.raises(OutOfRangeError):
        GamselConfig(**kw)


@pytest.mark.parametrize("kw", [dict(family="poisson"), dict(variant="bspline")])
def test_config_choices(kw):
    with pytest.raises(InvalidInputError):
        GamselConfig(**kw)


def test_config_per_variable_lists():
    cfg = GamselConfig(degrees=[4, 6, 8], dfs=[2.0, 3.0, 4.0])
    np.testing.assert_array_equal(cfg.degrees_for(3), [4, 6, 8])
    with pytest.raises(InvalidInputError):
        cfg.dfs_for(4)


def test_dataset_standardisation():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(30, 3))
    X[:, 2] = 4.0
    d = Dataset.from_arrays(X, rng.standard_normal(30))
    np.testing.assert_allclose(d.Xs[:, :2].sum(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(np.sum(d.Xs[:, :2] ** 2, axis=0), 1.0)
    assert d.constant.tolist() == [False, False, True]
    np.testing.assert_array_equal(d.Xs[:, 2], 0.0)
    np.testing.assert_allclose(d.standardize(X), d.Xs)


@pytest.mark.parametrize(
    "X, y, family",
    [
        (np.ones(5), np.ones(5), "gaussian"),
        (np.ones((5, 2)), np.ones(4), "gaussian"),
        (np.array([[1.0, np.nan], [2.0, 3.0]]), np.ones(2), "gaussian"),
        (np.ones((4, 1)), np.array([0, 1, 2, 1.0]), "binomial"),
    ],
)
def test_dataset_rejects(X, y, family):
    with pytest.raises(InvalidInputError):
        Dataset.from_arrays(X, y, family=family)


# -- objective --------------------------------------------------------------


def test_objective_at_zero_state():
    data, bases, psi, cfg = random_gaussian_problem(0)
    yc = data.y - data.y.mean()
    centred = Dataset.from_arrays(data.X, yc)
    st = GamselState.zeros(bases)
    assert objective(st, centred, bases, 1.3, cfg.gamma, psi) == pytest.approx(0.5 * yc @ yc)


def test_objective_reduces_to_lasso():
    data, bases, psi, _ = random_gaussian_problem(1)
    rng = np.random.default_rng(1)
    st = GamselState.zeros(bases, alpha0=0.2)
    st.alpha = rng.standard_normal(data.p)
    lam = 0.7
    r = data.y - 0.2 - data.Xs @ st.alpha
    expected = 0.5 * r @ r + lam * np.abs(st.alpha).sum()
    assert objective(st, data, bases, lam, 1.0, psi) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("family", ["gaussian", "binomial"])
def test_objective_matches_term_by_term(family):
    data, bases, psi, cfg = random_gaussian_problem(2)
    if family == "binomial":
        data = Dataset.from_arrays(data.X, (data.y > np.median(data.y)).astype(float), family="binomial")
    rng = np.random.default_rng(2)
    st = GamselState(0.3, rng.standard_normal(data.p), [rng.standard_normal(b.m) for b in bases])
    mine = objective(st, data, bases, 0.9, cfg.gamma, psi, family=family)
    ref = objective_by_terms(st.alpha0, st.alpha, st.beta, data.Xs, data.y, [b.U for b in bases],
                             [b.D for b in bases], 0.9, cfg.gamma, psi, family=family)
    assert mine == pytest.approx(ref, rel=1e-12)


def test_objective_dimension_mismatch():
    data, bases, psi, cfg = random_gaussian_problem(3)
    st = GamselState.zeros(bases[:-1])
    with pytest.raises(InvalidInputError):
        objective(st, data, bases, 1.0, cfg.gamma, psi)


# -- classification ---------------------------------------------------------


@pytest.mark.parametrize(
    "alpha, beta, expected",
    [
        (0.0, [0.0, 0.0], TermClass.ZERO),
        (0.3, [0.0, 0.0], TermClass.LINEAR),
        (0.0, [0.0, 0.2], TermClass.NONLINEAR),
        (0.5, [0.1, 0.0], TermClass.NONLINEAR),
        (1e-12, [1e-13], TermClass.ZERO),
    ],
)
def test_classify_term(alpha, beta, expected):
    assert classify_term(alpha, beta) is expected


def test_term_df_end_of_path():
    data, bases, psi, cfg = random_gaussian_problem(4)
    path = fit(data.X, data.y, cfg, lambdas=[1.0, 0.0])
    df = path.points[-1].term_df
    nonlinear = [j for j, c in enumerate(path.points[-1].classes) if c is TermClass.NONLINEAR]
    assert nonlinear
    # At lambda = 0 each nonlinear term recovers its calibrated df (minus the intercept).
    np.testing.assert_allclose(df[nonlinear], cfg.dfs_for(data.p)[nonlinear] - 1.0, rtol=1e-6)


# -- prediction -------------------------------------------------------------


@pytest.fixture(scope="module")
def small_path():
    data, _, _, cfg = random_gaussian_problem(5)
    return data, fit(data.X, data.y, cfg)


def test_predict_training_rows(small_path):
    data, path = small_path
    eta = predict(path, data.X)
    for k, pt in enumerate(path.points):
        fitted = linear_predictor(pt.state, data.Xs, path.bases)
        np.testing.assert_allclose(eta[:, k], fitted, atol=1e-10)


def test_predict_zero_state_is_intercept(small_path):
    data, path = small_path
    eta = predict(path, data.X[:7], index=0)
    np.testing.assert_allclose(eta, path.points[0].state.alpha0)
    assert eta.shape == (7,)


def test_predict_held_out_against_polynomial_rebuild():
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(80, 2))
    y = (X[:, 0] - 0.5) ** 2 * 4 + X[:, 1] + 0.1 * rng.standard_normal(80)
    cfg = GamselConfig(degrees=6, dfs=4.0, num_lambda=10)
    path = fit(X, y, cfg)
    X0 = rng.uniform(size=(15, 2))
    st = path.points[-1].state
    eta = path.predict(X0, index=len(path) - 1)
    # Rebuild each basis at X0 from monomials fitted to the training rows.
    ref = np.full(15, st.alpha0)
    for j, basis in enumerate(path.bases):
        c, s = X[:, j].mean(), np.ptp(X[:, j])
        V = np.vander((X[:, j] - c) / s, 6, increasing=True)
        C = np.linalg.lstsq(V, basis.U, rcond=None)[0]
        U0 = np.vander((X0[:, j] - c) / s, 6, increasing=True) @ C
        ref += st.alpha[j] * (X0[:, j] - path.centers[j]) / path.scales[j] + U0 @ st.beta[j]
    np.testing.assert_allclose(eta, ref, atol=1e-8)


def test_predict_response_scale():
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(60, 2))
    y = (X[:, 0] + 0.3 * rng.standard_normal(60) > 0.5).astype(float)
    path = fit(X, y, GamselConfig(family="binomial", num_lambda=5, degrees=5, dfs=3.0))
    eta = path.predict(X, index=4)
    np.testing.assert_allclose(path.predict(X, index=4, type="response"), 1 / (1 + np.exp(-eta)))


def test_predict_wrong_width(small_path):
    data, path = small_path
    with pytest.raises(InvalidInputError):
        predict(path, data.X[:, :2])
    with pytest.raises(InvalidInputError):
        predict(path, np.full((1, data.p), np.inf))
