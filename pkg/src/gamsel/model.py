"""Problem configuration, coefficient state, objective and prediction."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .exceptions import InvalidInputError, OutOfRangeError
from .spline_basis import evaluate_basis

FAMILIES = ("gaussian", "binomial")
VARIANTS = ("poly", "Q")


class TermClass(str, enum.Enum):
    ZERO = "zero"
    LINEAR = "linear"
    NONLINEAR = "nonlinear"

    def __str__(self):
        return self.value


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Raw predictors and response plus the standardisation that was applied.

    ``Xs`` holds each predictor centred and divided by the 2-norm of the
    centred column, so ``Xs[:, j] @ Xs[:, j] == 1``.  Zero-variance columns are
    left as zeros and flagged in ``constant``.
    """

    X: np.ndarray
    y: np.ndarray
    Xs: np.ndarray
    centers: np.ndarray
    scales: np.ndarray
    constant: np.ndarray
    names: list

    @classmethod
    def from_arrays(cls, X, y, names=None, family="gaussian"):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim != 2:
            raise InvalidInputError(f"X must be 2-dimensional, got shape {X.shape}")
        n, p = X.shape
        if y.size != n:
            raise InvalidInputError(f"X has {n} rows but y has {y.size} entries")
        if n < 2:
            raise InvalidInputError("need at least 2 observations")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise InvalidInputError("X and y must be finite")
        if family == "binomial" and not np.all((y == 0) | (y == 1)):
            raise InvalidInputError("binomial response must be coded 0/1")
        if names is None:
            names = [f"x{j + 1}" for j in range(p)]
        names = [str(s) for s in names]
        if len(names) != p:
            raise InvalidInputError(f"{len(names)} names for {p} columns")
        centers = X.mean(axis=0)
        Xc = X - centers
        scales = np.linalg.norm(Xc, axis=0)
        constant = scales <= 1e-12 * np.maximum(1.0, np.abs(centers)) * np.sqrt(n)
        scales = np.where(constant, 1.0, scales)
        Xs = np.where(constant, 0.0, Xc / scales)
        return cls(X=X, y=y, Xs=Xs, centers=centers, scales=scales, constant=constant, names=names)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def standardize(self, X0) -> np.ndarray:
        X0 = np.asarray(X0, dtype=float)
        if X0.ndim != 2 or X0.shape[1] != self.p:
            raise InvalidInputError(f"expected {self.p} columns, got shape {X0.shape}")
        return np.where(self.constant, 0.0, (X0 - self.centers) / self.scales)


def _per_variable(value, p, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(p, float(arr))
    if arr.size != p:
        raise InvalidInputError(f"{name} has {arr.size} entries for {p} variables")
    return arr.astype(float)


@dataclass
class GamselConfig:
    """Tuning parameters for a GAMSEL fit.

    ``degrees`` is the number of polynomial columns per variable including the
    intercept (so each basis has ``degrees - 1`` columns); ``dfs`` is the
    smoothing-spline degrees of freedom (intercept included) that fixes each
    term's end-of-path penalty.
    """

    gamma: float = 0.5
    degrees: int | Sequence[int] = 10
    dfs: float | Sequence[float] = 5.0
    num_lambda: int = 50
    lambda_min_ratio: float = 0.01
    family: str = "gaussian"
    variant: str = "poly"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 <= float(self.gamma) <= 1.0:
            raise OutOfRangeError(f"gamma must lie in [0, 1], got {self.gamma}")
        if int(self.num_lambda) < 1:
            raise OutOfRangeError(f"num_lambda must be >= 1, got {self.num_lambda}")
        if not 0.0 < float(self.lambda_min_ratio) < 1.0:
            raise OutOfRangeError(f"lambda_min_ratio must lie in (0, 1), got {self.lambda_min_ratio}")
        if self.family not in FAMILIES:
            raise InvalidInputError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if np.any(np.asarray(self.degrees) < 2):
            raise OutOfRangeError("degrees must be at least 2 (intercept plus linear column)")
        if np.any(np.asarray(self.dfs) < 1):
            raise OutOfRangeError("dfs must be at least 1")

    def degrees_for(self, p):
        return _per_variable(self.degrees, p, "degrees").astype(int)

    def dfs_for(self, p):
        return _per_variable(self.dfs, p, "dfs")

    def to_dict(self):
        def plain(v):
            return v if np.ndim(v) == 0 else [x.item() if hasattr(x, "item") else x for x in np.asarray(v)]

        return {
            "gamma": float(self.gamma),
            "degrees": plain(self.degrees),
            "dfs": plain(self.dfs),
            "num_lambda": int(self.num_lambda),
            "lambda_min_ratio": float(self.lambda_min_ratio),
            "family": self.family,
            "variant": self.variant,
        }


@dataclass
class GamselState:
    alpha0: float
    alpha: np.ndarray
    beta: list

    @classmethod
    def zeros(cls, bases, alpha0=0.0):
        return cls(float(alpha0), np.zeros(len(bases)), [np.zeros(b.m) for b in bases])

    def copy(self):
        return GamselState(float(self.alpha0), self.alpha.copy(), [b.copy() for b in self.beta])

    def check(self, bases):
        if self.alpha.size != len(bases) or len(self.beta) != len(bases):
            raise InvalidInputError("state does not match the number of bases")
        for j, (b, basis) in enumerate(zip(self.beta, bases)):
            if b.size != basis.m:
                raise InvalidInputError(f"beta block {j} has length {b.size}, basis has {basis.m} columns")
        if not (np.isfinite(self.alpha0) and np.all(np.isfinite(self.alpha))
                and all(np.all(np.isfinite(b)) for b in self.beta)):
            raise InvalidInputError("state contains non-finite values")


@dataclass
class PathPoint:
    lam: float
    state: GamselState
    classes: tuple
    term_df: np.ndarray
    deviance: float


@dataclass
class GamselPath:
    """A fitted regularisation path together with everything prediction needs."""

    config: GamselConfig
    points: list
    bases: list
    psi: np.ndarray
    centers: np.ndarray
    scales: np.ndarray
    constant: np.ndarray
    names: list
    meta: dict = field(default_factory=dict)

    @property
    def lambdas(self):
        return np.array([pt.lam for pt in self.points])

    @property
    def family(self):
        return self.config.family

    def __len__(self):
        return len(self.points)

    def standardize(self, X0):
        X0 = np.asarray(X0, dtype=float)
        if X0.ndim != 2 or X0.shape[1] != len(self.names):
            raise InvalidInputError(f"expected {len(self.names)} columns, got shape {X0.shape}")
        return np.where(self.constant, 0.0, (X0 - self.centers) / self.scales)

    def predict(self, X0, index=None, type="link"):
        return predict(self, X0, index=index, type=type)


# ---------------------------------------------------------------------------
# Objective and classification
# ---------------------------------------------------------------------------


def linear_predictor(state: GamselState, Xs, bases) -> np.ndarray:
    eta = np.full(Xs.shape[0], state.alpha0, dtype=float)
    eta += Xs @ state.alpha
    for b, basis in zip(state.beta, bases):
        if b.size and np.any(b):
            eta += basis.U @ b
    return eta


def penalty(state: GamselState, bases, lam, gamma, psi) -> float:
    sel = 0.0
    end = 0.0
    for j, basis in enumerate(bases):
        b = state.beta[j]
        sel += gamma * abs(state.alpha[j]) + (1.0 - gamma) * np.sqrt(b @ (basis.Dstar * b))
        end += psi[j] * (b @ (basis.D * b))
    return float(lam * sel + 0.5 * end)


def binomial_nll(y, eta) -> float:
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def objective(state: GamselState, dataset, bases, lam, gamma, psi, family="gaussian") -> float:
    """Penalised loss: squared error (with 1/2) or binomial negative log-likelihood."""
    state.check(bases)
    Xs, y = dataset.Xs, dataset.y
    if Xs.shape[1] != len(bases):
        raise InvalidInputError("dataset and bases disagree on the number of variables")
    eta = linear_predictor(state, Xs, bases)
    if family == "gaussian":
        loss = 0.5 * float(np.sum((y - eta) ** 2))
    elif family == "binomial":
        loss = binomial_nll(y, eta)
    else:
        raise InvalidInputError(f"unknown family {family!r}")
    return loss + penalty(state, bases, lam, gamma, np.asarray(psi, float))


def classify_term(alpha_j, beta_j, tol=1e-10) -> TermClass:
    beta_j = np.asarray(beta_j, dtype=float)
    if beta_j.size and np.max(np.abs(beta_j)) > tol:
        return TermClass.NONLINEAR
    if abs(alpha_j) > tol:
        return TermClass.LINEAR
    return TermClass.ZERO


def classify_state(state: GamselState, tol=1e-10) -> tuple:
    return tuple(classify_term(a, b, tol) for a, b in zip(state.alpha, state.beta))


def term_df(state: GamselState, bases, lam, gamma, psi, tol=1e-10) -> np.ndarray:
    """Effective degrees of freedom of each fitted term.

    Zero terms have df 0 and linear terms df 1.  A nonlinear term counts the
    shrinkage factors of its (linearised) beta update, with the linear
    direction counted as a full degree when ``alpha_j`` is also nonzero.
    At ``lam = 0`` this reproduces the calibrated ``df - 1``.
    """
    out = np.zeros(len(bases))
    lt = lam * (1.0 - gamma)
    for j, basis in enumerate(bases):
        cls = classify_term(state.alpha[j], state.beta[j], tol)
        if cls is TermClass.ZERO:
            continue
        if cls is TermClass.LINEAR:
            out[j] = 1.0
            continue
        b = state.beta[j]
        Ds = basis.Dstar
        c = np.sqrt(np.sum(Ds * b * b))
        dinv = 1.0 / Ds
        dt = dinv + psi[j] * (basis.D > 0)
        shrink = dinv / (dt + lt / c)
        if abs(state.alpha[j]) > tol:
            shrink[0] = 1.0
        out[j] = float(np.sum(shrink))
    return out


def deviance(y, eta, family) -> float:
    if family == "gaussian":
        return float(np.sum((y - eta) ** 2))
    return 2.0 * binomial_nll(y, eta)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def _basis_matrices(path, X0):
    return [basis.evaluate(X0[:, j]) if not basis.degenerate else np.zeros((X0.shape[0], basis.m))
            for j, basis in enumerate(path.bases)]


def predict(path: GamselPath, X0, index=None, type="link") -> np.ndarray:
    """Linear predictor (``type="link"``) or probabilities (``"response"``).

    Returns an ``n0 x L`` array for all path points, or a vector when
    ``index`` is an integer.
    """
    X0 = np.asarray(X0, dtype=float)
    if X0.ndim == 1:
        X0 = X0[None, :]
    if not np.all(np.isfinite(X0)):
        raise InvalidInputError("new data contains non-finite values")
    Xs0 = path.standardize(X0)
    Us = _basis_matrices(path, X0)
    single = np.ndim(index) == 0 and index is not None
    idx = range(len(path.points)) if index is None else np.atleast_1d(index)
    cols = []
    for i in idx:
        st = path.points[int(i)].state
        eta = np.full(X0.shape[0], st.alpha0) + Xs0 @ st.alpha
        for U0, b in zip(Us, st.beta):
            if np.any(b):
                eta += U0 @ b
        cols.append(eta)
    out = np.column_stack(cols) if cols else np.zeros((X0.shape[0], 0))
    if type == "response":
        if path.family == "binomial":
            out = expit(out)
    elif type != "link":
        raise InvalidInputError(f"type must be 'link' or 'response', got {type!r}")
    return out[:, 0] if single else out
