"""Binomial family via a fixed-curvature quadratic majorisation.

The logistic log-likelihood has curvature at most 1/4, so replacing the IRLS
weights by the constant 1/4 gives a global upper bound on the negative
log-likelihood around the current fit.  Minimising that bound is an ordinary
squared-error GAMSEL problem on the working response, solved by the
Gaussian block coordinate descent engine.

Convention: the majoriser is ``1/8 ||z - eta||^2`` plus the *unscaled*
penalties; dividing through by 1/4 hands the engine ``4 * lam`` and
``4 * psi``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import DegenerateResponseError, InvalidInputError
from .model import binomial_nll, linear_predictor, objective, penalty
from .optimizer import (
    BlockCoordinateDescent,
    _make_path,
    _make_point,
    lambda_max,
    make_lambda_grid,
    strong_rule_screen,
)

logger = logging.getLogger(__name__)

WEIGHT = 0.25
P_CLAMP = 1e-8


@dataclass(frozen=True)
class WorkingResponse:
    z: np.ndarray
    eta: np.ndarray
    p_tilde: np.ndarray


def _check_binary(y):
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidInputError("binomial response must be coded 0/1")
    return y


def working_response(y, eta, clamp=P_CLAMP) -> WorkingResponse:
    """``z = eta + (y - p) / w`` with ``w = 1/4`` and ``p`` clamped away from 0 and 1."""
    y = _check_binary(y)
    eta = np.asarray(eta, dtype=float)
    p = expit(eta)
    p = np.clip(p, clamp, 1.0 - clamp)
    z = eta + (y - p) / WEIGHT
    return WorkingResponse(z=z, eta=eta, p_tilde=p)


def majorizer(y, eta_tilde, eta) -> float:
    """``1/8 ||z - eta||^2`` built at ``eta_tilde``, shifted to touch the NLL there."""
    wr = working_response(y, eta_tilde, clamp=0.0)
    quad = 0.5 * WEIGHT * np.sum((wr.z - eta) ** 2)
    quad0 = 0.5 * WEIGHT * np.sum((wr.z - eta_tilde) ** 2)
    return float(quad - quad0 + binomial_nll(y, eta_tilde))


def penalized_nll(state, dataset, bases, lam, gamma, psi) -> float:
    """Binomial negative log-likelihood plus the selection and end-of-path penalties."""
    return objective(state, dataset, bases, lam, gamma, psi, family="binomial")


def nll_gradient(state, dataset, bases):
    """Gradient of the NLL with respect to (alpha0, alpha, beta blocks)."""
    eta = linear_predictor(state, dataset.Xs, bases)
    resid = expit(eta) - dataset.y
    g0 = float(resid.sum())
    ga = dataset.Xs.T @ resid
    gb = [b.U.T @ resid for b in bases]
    return g0, ga, gb


def smooth_gradient(state, dataset, bases, psi):
    """Gradient of the NLL plus the end-of-path quadratic ``psi/2 b' D b``."""
    g0, ga, gb = nll_gradient(state, dataset, bases)
    gb = [g + ps * b.D * beta for g, ps, b, beta in zip(gb, psi, bases, state.beta)]
    return g0, ga, gb


def fit_path_binomial(dataset, bases, config, psi, lambdas=None, screen=True, tol=1e-7, kkt_tol=1e-6,
                      max_iter=100_000, mm_tol=1e-8, max_mm=100, monitor=None, append_zero=False,
                      weighted_lambda_max=True):
    """Warm-started logistic path: outer lambda loop, middle MM loop, inner CD."""
    y = _check_binary(dataset.y)
    ybar = y.mean()
    if ybar in (0.0, 1.0):
        raise DegenerateResponseError("binomial response has a single class")
    gamma = float(config.gamma)
    psi = np.asarray(psi, dtype=float)
    Xs = dataset.Xs
    lmax = lambda_max(Xs, y, bases, gamma, weighted=weighted_lambda_max)
    if lambdas is None:
        if lmax <= 0:
            raise DegenerateResponseError("response has no signal along any predictor (lambda_max = 0)")
        lambdas = make_lambda_grid(lmax, config.num_lambda, config.lambda_min_ratio, append_zero=append_zero)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) >= 0):
        raise InvalidInputError("lambda grid must be strictly decreasing")

    scale = 1.0 / WEIGHT
    engine = BlockCoordinateDescent(Xs, bases, scale * psi, gamma, tol=tol, kkt_tol=kkt_tol,
                                    max_iter=max_iter, monitor=monitor, usable=~np.asarray(dataset.constant))
    engine.state.alpha0 = float(np.log(ybar / (1.0 - ybar)))
    points = []
    history = []
    capped = []
    prev_lam = None
    for k, lam in enumerate(lambdas):
        obj = penalized_nll(engine.state, dataset, bases, lam, gamma, psi)
        trace = [obj]
        for it in range(max_mm):
            eta = linear_predictor(engine.state, Xs, bases)
            wr = working_response(y, eta)
            engine.set_response(wr.z)
            strong = None
            if screen and it == 0:
                ref = prev_lam if prev_lam is not None else lmax
                if lam < ref:
                    keep_a, keep_b = strong_rule_screen(scale * lam, scale * ref, engine.r, Xs, bases, gamma,
                                                        engine.psi, engine.state.beta)
                    strong = keep_a | keep_b
            engine.solve(scale * lam, strong=strong, lambda_index=k)
            new_obj = penalized_nll(engine.state, dataset, bases, lam, gamma, psi)
            trace.append(new_obj)
            if obj - new_obj < mm_tol * max(abs(obj), 1.0):
                break
            obj = new_obj
        else:
            capped.append(k)
            warnings.warn(f"MM loop hit {max_mm} iterations at lambda index {k}", stacklevel=2)
        history.append(trace)
        points.append(_make_point(engine, lam, dataset, bases, psi, gamma, "binomial"))
        prev_lam = lam
    meta = {"lambda_max": lmax, "mm_history": history, "mm_capped": capped}
    return _make_path(config, points, bases, psi, dataset, meta)


__all__ = [
    "WorkingResponse",
    "working_response",
    "majorizer",
    "penalized_nll",
    "nll_gradient",
    "smooth_gradient",
    "fit_path_binomial",
    "penalty",
]
