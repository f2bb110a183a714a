"""High-level entry points: build bases, calibrate psi, fit a path."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .model import Dataset, GamselConfig
from .spline_basis import build_pseudo_spline, calibrate_psi


def build_bases(dataset: Dataset, config: GamselConfig, threads: int = 1):
    """One pseudo-spline basis per predictor column of ``dataset.X``."""
    p = dataset.p
    degrees = config.degrees_for(p)
    dfs = config.dfs_for(p)

    def one(j):
        return build_pseudo_spline(dataset.X[:, j], int(degrees[j]), float(dfs[j]), config.variant,
                                   name=dataset.names[j])

    if threads > 1 and p > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(p)))
    return [one(j) for j in range(p)]


def psi_target(basis, df):
    """Degrees of freedom the basis should carry at the end of the path.

    ``df`` counts the intercept, which the centred basis excludes.
    """
    df_eff = min(float(df), float(basis.m + 1))
    return float(np.clip(df_eff - 1.0, 1.0, basis.m))


def calibrate_psis(bases, dfs):
    dfs = np.broadcast_to(np.asarray(dfs, dtype=float), (len(bases),))
    out = np.zeros(len(bases))
    for j, (basis, df) in enumerate(zip(bases, dfs)):
        if basis.degenerate or basis.m == 1:
            continue
        out[j] = calibrate_psi(basis.D, psi_target(basis, df))
    return out


def fit(X, y, config: GamselConfig | None = None, names=None, lambdas=None, threads: int = 1, **solver_kw):
    """Fit a GAMSEL regularisation path to raw predictors ``X`` and response ``y``."""
    from .logistic import fit_path_binomial
    from .optimizer import fit_path_gaussian

    config = config or GamselConfig()
    dataset = Dataset.from_arrays(X, y, names=names, family=config.family)
    bases = build_bases(dataset, config, threads=threads)
    psi = calibrate_psis(bases, config.dfs_for(dataset.p))
    if config.family == "binomial":
        return fit_path_binomial(dataset, bases, config, psi, lambdas=lambdas, **solver_kw)
    return fit_path_gaussian(dataset, bases, config, psi, lambdas=lambdas, **solver_kw)
