"""K-fold cross-validation over a shared lambda grid."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .exceptions import InvalidInputError, RankDeficiencyError
from .fitting import build_bases, calibrate_psis
from .logistic import fit_path_binomial
from .model import Dataset, GamselConfig, GamselPath, predict
from .optimizer import fit_path_gaussian, lambda_max, make_lambda_grid
from .spline_basis import build_pseudo_spline, subset_basis

logger = logging.getLogger(__name__)

MODES = ("regenerate", "transform")
ERRORS = ("mse", "deviance", "misclassification")


@dataclass
class CvResult:
    """Cross-validation curves along the full-data lambda grid.

    ``fold_errors`` is ``K x L``; ``mean_error`` and ``se`` are the fold-size
    weighted mean and its standard error.
    """

    lambdas: np.ndarray
    mean_error: np.ndarray
    se: np.ndarray
    index_min: int
    index_1se: int
    fold_errors: np.ndarray
    folds: np.ndarray
    mode: str
    error: str
    path: GamselPath | None = None
    extra: dict = field(default_factory=dict)

    @property
    def lambda_min(self):
        return float(self.lambdas[self.index_min])

    @property
    def lambda_1se(self):
        return float(self.lambdas[self.index_1se])

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "error": self.error,
            "n_folds": int(self.fold_errors.shape[0]),
            "index_min": int(self.index_min),
            "index_1se": int(self.index_1se),
            "lambda_min": self.lambda_min,
            "lambda_1se": self.lambda_1se,
            "error_min": float(self.mean_error[self.index_min]),
            "error_1se": float(self.mean_error[self.index_1se]),
        }


def kfold_split(n, K, seed=None, y=None) -> np.ndarray:
    """Fold label in ``0..K-1`` for each of ``n`` rows.

    Fold sizes differ by at most one.  Passing a 0/1 ``y`` stratifies: each
    class is shuffled separately and the classes are dealt out in turn, so
    every fold gets its share of positives.
    """
    n, K = int(n), int(K)
    if not 2 <= K <= n:
        raise InvalidInputError(f"number of folds must satisfy 2 <= K <= n (K={K}, n={n})")
    rng = np.random.default_rng(seed)
    if y is None:
        order = rng.permutation(n)
    else:
        y = np.asarray(y).ravel()
        if y.size != n:
            raise InvalidInputError("y must have n entries")
        order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)])
    folds = np.empty(n, dtype=int)
    folds[order] = np.arange(n) % K
    return folds


def select_lambda_1se(mean_error, se) -> int:
    """Index of the largest lambda within one standard error of the minimum.

    ``mean_error`` is ordered by decreasing lambda, so this is the smallest
    qualifying index.
    """
    mean_error = np.asarray(mean_error, dtype=float)
    se = np.asarray(se, dtype=float)
    i_min = int(np.argmin(mean_error))
    bound = mean_error[i_min] + se[i_min]
    return int(np.flatnonzero(mean_error <= bound)[0])


def _loss(y, eta, family, error):
    if family == "gaussian":
        return (y[:, None] - eta) ** 2
    p = np.clip(expit(eta), 1e-15, 1.0 - 1e-15)
    if error == "misclassification":
        return (y[:, None] != (p > 0.5)).astype(float)
    return -2.0 * (y[:, None] * np.log(p) + (1.0 - y[:, None]) * np.log1p(-p))


def _fold_bases(full_bases, fold_data, config, keep, mode):
    if mode == "regenerate":
        return build_bases(fold_data, config)
    out = []
    degrees = config.degrees_for(fold_data.p)
    dfs = config.dfs_for(fold_data.p)
    for j, basis in enumerate(full_bases):
        try:
            if fold_data.constant[j]:
                raise RankDeficiencyError("constant on fold")
            out.append(subset_basis(basis, keep))
        except RankDeficiencyError:
            # Too few distinct values left on this fold: rebuild under the
            # unique-value rule instead.
            out.append(build_pseudo_spline(fold_data.X[:, j], int(degrees[j]), float(dfs[j]), config.variant,
                                           name=fold_data.names[j]))
    return out


def _fit(dataset, bases, config, psi, lambdas, solver_kw):
    if config.family == "binomial":
        return fit_path_binomial(dataset, bases, config, psi, lambdas=lambdas, **solver_kw)
    return fit_path_gaussian(dataset, bases, config, psi, lambdas=lambdas, **solver_kw)


def cv_path(X, y, config: GamselConfig | None = None, K=10, seed=None, mode="regenerate", error=None,
            names=None, folds=None, threads=1, fit_full=True, **solver_kw) -> CvResult:
    """K-fold cross-validation of the GAMSEL path.

    The lambda grid comes from the full data and is shared by every fold,
    multiplied by ``n_fold / n`` for the smaller problems.  ``mode`` chooses
    between rebuilding each variable's basis on the fold rows
    (``"regenerate"``) and re-orthonormalising the full-data basis
    (``"transform"``, faster, approximate for the linear column).
    ``error`` defaults to ``"mse"`` for Gaussian and ``"deviance"`` for
    binomial responses.
    """
    config = config or GamselConfig()
    config.validate()
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    family = config.family
    if error is None:
        error = "mse" if family == "gaussian" else "deviance"
    if error not in ERRORS or (family == "gaussian") != (error == "mse"):
        raise InvalidInputError(f"error {error!r} is not available for the {family} family")

    full = Dataset.from_arrays(X, y, names=names, family=family)
    n = full.n
    if folds is None:
        folds = kfold_split(n, K, seed, y=full.y if family == "binomial" else None)
    folds = np.asarray(folds, dtype=int)
    K = int(folds.max()) + 1
    if folds.size != n or K < 2:
        raise InvalidInputError("fold labels must cover every row with at least two folds")

    full_bases = build_bases(full, config, threads=threads)
    psi_full = calibrate_psis(full_bases, config.dfs_for(full.p))
    lmax = lambda_max(full.Xs, full.y, full_bases, config.gamma)
    lambdas = make_lambda_grid(lmax, config.num_lambda, config.lambda_min_ratio)
    path = None
    if fit_full:
        path = _fit(full, full_bases, config, psi_full, lambdas, solver_kw)

    def one(k):
        test = folds == k
        keep = np.flatnonzero(~test)
        data_k = Dataset.from_arrays(full.X[keep], full.y[keep], names=full.names, family=family)
        bases_k = _fold_bases(full_bases, data_k, config, keep, mode)
        scale = keep.size / n
        if mode == "transform":
            # The quadratic penalty is rescaled with lambda, exactly as in the
            # reduced ridge problem the transformed basis solves.
            psi_k = np.array([psi_full[j] * scale if hasattr(b, "parent") else 0.0
                              for j, b in enumerate(bases_k)])
            redo = [j for j, b in enumerate(bases_k) if not hasattr(b, "parent")]
            if redo:
                psi_k[redo] = calibrate_psis([bases_k[j] for j in redo], config.dfs_for(full.p)[redo])
        else:
            psi_k = calibrate_psis(bases_k, config.dfs_for(full.p))
        path_k = _fit(data_k, bases_k, config, psi_k, lambdas * scale, solver_kw)
        eta = predict(path_k, full.X[test])
        return _loss(full.y[test], eta, family, error).mean(axis=0), int(test.sum())

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(K)))
    else:
        results = [one(k) for k in range(K)]
    fold_errors = np.vstack([r[0] for r in results])
    sizes = np.array([r[1] for r in results], dtype=float)
    mean_error = np.average(fold_errors, axis=0, weights=sizes)
    var = np.average((fold_errors - mean_error) ** 2, axis=0, weights=sizes) / (K - 1)
    se = np.sqrt(var)
    index_min = int(np.argmin(mean_error))
    index_1se = select_lambda_1se(mean_error, se)
    return CvResult(
        lambdas=lambdas,
        mean_error=mean_error,
        se=se,
        index_min=index_min,
        index_1se=index_1se,
        fold_errors=fold_errors,
        folds=folds,
        mode=mode,
        error=error,
        path=path,
        extra={"lambda_max": lmax, "fold_sizes": sizes.astype(int).tolist()},
    )


__all__ = ["CvResult", "kfold_split", "select_lambda_1se", "cv_path", "MODES", "ERRORS"]
