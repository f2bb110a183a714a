"""Blockwise coordinate descent along a warm-started lambda path.

Each variable contributes two blocks: a scalar linear coefficient ``alpha_j``
(lasso penalty ``gamma * lam``) and a vector ``beta_j`` on the orthonormal
basis ``U_j`` (group penalty ``(1 - gamma) * lam`` in the ``D*`` norm plus the
quadratic ``psi_j / 2 * beta_j' D_j beta_j``).  Both block minimisations are
exact, so every update is a descent step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .exceptions import ConvergenceError, DegenerateResponseError, InvalidInputError
from .model import (
    GamselPath,
    GamselState,
    PathPoint,
    classify_state,
    deviance,
    linear_predictor,
    term_df,
)

logger = logging.getLogger(__name__)

# Relative slack when testing "gradient exceeds threshold" for an inactive
# block; keeps exact ties (e.g. at lambda_max) on the zero side.
ADMIT_RTOL = 1e-10


def soft_threshold(z, t):
    """``sign(z) * max(|z| - t, 0)``."""
    if np.any(np.asarray(t) < 0):
        raise InvalidInputError("threshold must be non-negative")
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def update_alpha(x_j, residual, threshold):
    """Lasso update for a unit-norm column given the partial residual.

    ``residual`` must exclude variable j's own linear contribution.
    """
    return float(soft_threshold(float(x_j @ residual), threshold))


@numba.njit(cache=True)
def _norm_root(g, Dt, lam_t, rtol, max_iter):
    g2 = g * g
    gap = np.sqrt(g2.sum()) - lam_t
    lo = gap / Dt.max()
    hi = gap / Dt.min()
    if hi - lo <= rtol * hi:
        return hi
    c = lo
    for _ in range(max_iter):
        F = 0.0
        dF = 0.0
        for i in range(g2.size):
            inv = 1.0 / (Dt[i] * c + lam_t)
            t = g2[i] * inv * inv
            F += t
            dF += t * Dt[i] * inv
        h = 1.0 / np.sqrt(F) - 1.0
        if h < 0:
            lo = c
        elif h > 0:
            hi = c
        else:
            return c
        # d/dc of F^{-1/2} is F^{-3/2} * sum(g2 * Dt / den^3)
        dh = F**-1.5 * dF
        c_new = c - h / dh if dh > 0 else 0.5 * (lo + hi)
        if not lo <= c_new <= hi:
            c_new = 0.5 * (lo + hi)
        if abs(c_new - c) <= rtol * c_new or hi - lo <= rtol * hi:
            return c_new
        c = c_new
    return c


def solve_norm_equation(g, Dtilde, lam_t, rtol=1e-12, max_iter=200):
    """Positive root ``c`` of ``sum((g / (Dtilde * c + lam_t))**2) = 1``.

    Requires ``||g|| > lam_t``.  Newton's method on ``1 / sqrt(F(c)) - 1``
    (exact in one step when ``Dtilde`` is constant), safeguarded by
    bisection on the bracket ``[(||g|| - lam_t) / max(Dtilde),
    (||g|| - lam_t) / min(Dtilde)]``.
    """
    g = np.ascontiguousarray(g, dtype=float)
    Dt = np.ascontiguousarray(np.broadcast_to(np.asarray(Dtilde, dtype=float), g.shape))
    ng = float(np.sqrt(g @ g))
    if not ng > lam_t:
        raise InvalidInputError(f"need ||g|| > lam_t (got {ng} <= {lam_t}); use the zero solution")
    if np.any(Dt <= 0):
        raise InvalidInputError("Dtilde must be positive")
    return float(_norm_root(g, Dt, float(lam_t), float(rtol), int(max_iter)))


def _beta_map(v, Dstar, psi, lam_t):
    """Exact minimiser of ``1/2||r - U b||^2 + lam_t ||b||_{D*} + psi/2 b' D b``.

    ``v = U' r`` with ``r`` the partial residual.  Returns ``(beta, c)``; ``c``
    is ``||D*^{1/2} beta||`` (0 in the zero branch).
    """
    sq = np.sqrt(Dstar)
    g = v / sq
    ng = float(np.sqrt(g @ g))
    if ng <= lam_t:
        return np.zeros_like(v), 0.0
    Dt = 1.0 / Dstar
    if psi:
        Dt = Dt.copy()
        Dt[1:] += psi
    if lam_t == 0.0:
        theta = g / Dt
        return theta / sq, float(np.sqrt(theta @ theta))
    c = _norm_root(g, Dt, lam_t, 1e-12, 200)
    theta = g / (Dt + lam_t / c)
    return theta / sq, c


def update_beta(U, residual, D, psi, lam_t):
    """Group update for ``beta_j`` given the partial residual.

    ``residual`` must exclude variable j's own nonlinear contribution.  Returns
    zero when ``||D*^{-1/2} U' r|| <= lam_t``.
    """
    D = np.asarray(D, dtype=float)
    Dstar = D.copy()
    Dstar[0] = 1.0
    beta, _ = _beta_map(U.T @ residual, Dstar, psi, lam_t)
    return beta


def joint_update(w, Dstar, D, psi, ga, lt):
    """Exact minimiser over ``(alpha_j, beta_j)`` in basis coordinates.

    Minimises ``1/2||w - a e1 - b||^2 + ga |a| + lt ||b||_{D*} + psi/2 b' D b``
    where ``w = U' r`` for the residual ``r`` excluding both blocks.  The
    linear direction ``e1`` is shared, so alternating the two block updates
    zig-zags; instead the three KKT cases are checked in turn:
    ``alpha = 0``, ``beta = 0``, and both nonzero (possible only when
    ``ga < lt``), the last reducing to the same 1-D norm equation with the
    linear coordinate eliminated.
    """
    # alpha = 0
    beta, _ = _beta_map(w, Dstar, psi, lt)
    if abs(w[0] - beta[0]) <= ga:
        return 0.0, beta
    # beta = 0
    a = w[0] - ga if w[0] > ga else (w[0] + ga if w[0] < -ga else 0.0)
    v = w.copy()
    v[0] -= a
    if float(np.sqrt(np.sum(v * v / Dstar))) <= lt:
        return a, np.zeros_like(w)
    # both nonzero: beta[0] = sign * rho * c, rho = ga / lt
    if lt > 0 and ga < lt and w.size > 1:
        rho = ga / lt
        s1 = np.sqrt(1.0 - rho * rho)
        Dn = D[1:]
        g = w[1:] / (np.sqrt(Dn) * s1)
        Dt = 1.0 / Dn + psi
        if float(np.sqrt(g @ g)) > lt:
            c = _norm_root(g, Dt, lt, 1e-12, 200)
            sign = 1.0 if w[0] > 0 else -1.0
            a = w[0] - sign * (ga + rho * c)
            if sign * a > 0:
                out = np.empty_like(w)
                out[0] = sign * rho * c
                out[1:] = w[1:] * c / (c + (lt + psi * c) * Dn)
                return a, out
    # Numerically borderline: fall back to a few alternating passes.
    a = 0.0
    for _ in range(200):
        z = w[0] - beta[0]
        a_new = z - ga if z > ga else (z + ga if z < -ga else 0.0)
        v = w.copy()
        v[0] -= a_new
        beta_new, _ = _beta_map(v, Dstar, psi, lt)
        done = abs(a_new - a) < 1e-15 and np.max(np.abs(beta_new - beta)) < 1e-15
        a, beta = a_new, beta_new
        if done:
            break
    return a, beta


def lambda_max(Xs, y, bases, gamma, weighted=True):
    """Smallest lambda at which every alpha and beta is zero.

    With ``weighted=True`` the beta branch uses ``||D*^{-1/2} U' y||``, the
    exact zero-branch statistic of the group update; ``weighted=False`` uses
    the unweighted ``||U' y||``, an upper bound.  Branches with a zero
    penalty weight (gamma in {0, 1}) are skipped.
    """
    y = np.asarray(y, dtype=float)
    r = y - y.mean()
    cand = [0.0]
    if gamma > 0:
        cand.append(np.max(np.abs(Xs.T @ r)) / gamma if Xs.shape[1] else 0.0)
    if gamma < 1:
        for basis in bases:
            if basis.degenerate:
                continue
            v = basis.U.T @ r
            if weighted:
                v = v / np.sqrt(basis.Dstar)
            cand.append(float(np.linalg.norm(v)) / (1.0 - gamma))
    return float(max(cand))


def make_lambda_grid(lam_max, num_lambda=50, ratio=0.01, append_zero=False):
    """Log-equispaced decreasing grid from ``lam_max`` to ``ratio * lam_max``."""
    if num_lambda < 1:
        raise InvalidInputError("num_lambda must be >= 1")
    if num_lambda == 1:
        grid = np.array([float(lam_max)])
    else:
        grid = lam_max * np.exp(np.linspace(0.0, np.log(ratio), num_lambda))
        grid[0] = lam_max
        grid[-1] = lam_max * ratio
    if append_zero:
        grid = np.append(grid, 0.0)
    return grid


def strong_rule_screen(lam_k, lam_prev, residual, Xs, bases, gamma, psi, beta_prev):
    """Sequential strong rules.

    Returns boolean masks ``(keep_alpha, keep_beta)`` of the blocks that
    survive screening at ``lam_k`` given the residual at ``lam_prev``.
    """
    thresh = 2.0 * lam_k - lam_prev
    p = Xs.shape[1]
    grad_a = np.abs(Xs.T @ residual)
    keep_a = ~(grad_a < gamma * thresh)
    keep_b = np.zeros(p, dtype=bool)
    for j, basis in enumerate(bases):
        if basis.degenerate:
            continue
        v = basis.U.T @ residual + psi[j] * basis.D * beta_prev[j]
        keep_b[j] = not (np.linalg.norm(v) < (1.0 - gamma) * thresh)
    if gamma == 0:
        keep_a[:] = False
    if gamma == 1:
        keep_b[:] = False
    return keep_a, keep_b


@dataclass
class KKTReport:
    """Per-variable stationarity residuals (0 means the condition holds)."""

    alpha: np.ndarray
    beta: np.ndarray

    @property
    def max(self):
        vals = np.concatenate([self.alpha, self.beta])
        return float(vals.max()) if vals.size else 0.0

    def ok(self, tol=1e-6):
        return self.max < tol


def kkt_check(state, Xs, y, bases, lam, gamma, psi, residual=None):
    """Subgradient residuals of the squared-error problem at ``state``."""
    if residual is None:
        residual = y - linear_predictor(state, Xs, bases)
    p = Xs.shape[1]
    ra = np.zeros(p)
    rb = np.zeros(p)
    lt = lam * (1.0 - gamma)
    for j, basis in enumerate(bases):
        if gamma > 0:
            grad = float(Xs[:, j] @ residual)
            a = state.alpha[j]
            if a != 0:
                ra[j] = abs(grad - gamma * lam * np.sign(a))
            else:
                ra[j] = max(abs(grad) - gamma * lam, 0.0)
        if gamma < 1 and not basis.degenerate:
            b = state.beta[j]
            v = basis.U.T @ residual
            Ds = basis.Dstar
            if np.any(b != 0):
                nrm = np.sqrt(b @ (Ds * b))
                rb[j] = float(np.linalg.norm(v - psi[j] * basis.D * b - lt * Ds * b / nrm))
            else:
                rb[j] = max(float(np.linalg.norm(v / np.sqrt(Ds))) - lt, 0.0)
    return KKTReport(ra, rb)


@dataclass
class PathDriverState:
    """Mutable bookkeeping owned by the path driver."""

    residual: np.ndarray
    active: np.ndarray
    ever_active: np.ndarray
    lambda_grid: np.ndarray
    tol: float = 1e-7
    kkt_tol: float = 1e-6
    sweeps: list = field(default_factory=list)


class BlockCoordinateDescent:
    """Squared-error GAMSEL solver on a fixed design.

    The same engine serves the binomial middle loop, which hands it a working
    response and penalties scaled for the 1/4-weighted quadratic.
    """

    def __init__(self, Xs, bases, psi, gamma, tol=1e-7, kkt_tol=1e-6, max_iter=100_000,
                 screen=True, monitor=None, usable=None):
        self.Xs = np.asarray(Xs, dtype=float)
        self.bases = list(bases)
        self.p = self.Xs.shape[1]
        self.psi = np.asarray(psi, dtype=float)
        self.gamma = float(gamma)
        self.tol = tol
        self.kkt_tol = kkt_tol
        self.max_iter = max_iter
        self.screen = screen
        self.monitor = monitor
        self.U = [b.U for b in self.bases]
        self.D = [np.asarray(b.D, float) for b in self.bases]
        self.Dstar = [np.asarray(b.Dstar, float) for b in self.bases]
        if usable is None:
            usable = np.ones(self.p, dtype=bool)
        self.usable = np.asarray(usable, bool) & np.array([not b.degenerate for b in self.bases], bool)
        self.use_alpha = self.gamma > 0
        self.use_beta = self.gamma < 1
        self.state = GamselState.zeros(self.bases)
        self.y = None
        self.lam = None
        self.ever_active = np.zeros(self.p, dtype=bool)

    # -- bookkeeping -------------------------------------------------------

    def residual_from_scratch(self):
        return self.y - linear_predictor(self.state, self.Xs, self.bases)

    def set_response(self, y):
        self.y = np.asarray(y, dtype=float)
        self.state.alpha0 = float(self.y.mean())
        self.r = self.residual_from_scratch()

    # -- block updates -----------------------------------------------------

    def _sweep(self, idx, lam):
        """One pass over the variables in ``idx``; returns the max change."""
        Xs, r = self.Xs, self.r
        st = self.state
        ga = self.gamma * lam
        lt = (1.0 - self.gamma) * lam
        delta = 0.0
        for j in idx:
            if self.use_alpha and self.use_beta and lam > 0:
                U = self.U[j]
                a_old = st.alpha[j]
                b_old = st.beta[j]
                w = U.T @ r + b_old
                w[0] += a_old
                a_new, b_new = joint_update(w, self.Dstar[j], self.D[j], self.psi[j], ga, lt)
                da = a_new - a_old
                db = b_new - b_old
                moved = False
                if da != 0:
                    r -= da * Xs[:, j]
                    st.alpha[j] = a_new
                    delta = max(delta, abs(da))
                    moved = True
                if np.any(db != 0):
                    r -= U @ db
                    st.beta[j] = b_new
                    delta = max(delta, float(np.max(np.abs(db))))
                    moved = True
                if moved and self.monitor is not None:
                    self.monitor(self, "joint", j)
                continue
            if self.use_alpha:
                x = Xs[:, j]
                old = st.alpha[j]
                z = float(x @ r) + old
                new = z - ga if z > ga else (z + ga if z < -ga else 0.0)
                if new != old:
                    r -= (new - old) * x
                    st.alpha[j] = new
                    delta = max(delta, abs(new - old))
                    if self.monitor is not None:
                        self.monitor(self, "alpha", j)
            if self.use_beta:
                U = self.U[j]
                old = st.beta[j]
                v = U.T @ r + old
                new, _ = _beta_map(v, self.Dstar[j], self.psi[j], lt)
                diff = new - old
                if np.any(diff != 0):
                    r -= U @ diff
                    st.beta[j] = new
                    delta = max(delta, float(np.max(np.abs(diff))))
                    if self.monitor is not None:
                        self.monitor(self, "beta", j)
        return delta

    def _violations(self, mask, lam):
        """Variables in ``mask`` (all currently zero) whose zero blocks violate KKT."""
        out = np.zeros(self.p, dtype=bool)
        idx = np.flatnonzero(mask & self.usable)
        if idx.size == 0:
            return out
        r = self.r
        if self.use_alpha:
            thr = self.gamma * lam * (1.0 + ADMIT_RTOL)
            grad = np.abs(self.Xs[:, idx].T @ r)
            out[idx[grad > thr]] = True
        if self.use_beta:
            thr = (1.0 - self.gamma) * lam * (1.0 + ADMIT_RTOL)
            for j in idx:
                if out[j]:
                    continue
                v = (self.U[j].T @ r) / np.sqrt(self.Dstar[j])
                if float(np.sqrt(v @ v)) > thr:
                    out[j] = True
        return out

    def _active_kkt(self, idx, lam):
        if idx.size == 0:
            return 0.0
        sub = [self.bases[j] for j in idx]
        st = GamselState(self.state.alpha0, self.state.alpha[idx], [self.state.beta[j] for j in idx])
        rep = kkt_check(st, self.Xs[:, idx], self.y, sub, lam, self.gamma, self.psi[idx], residual=self.r)
        return rep.max

    # -- solve at one lambda -----------------------------------------------

    def solve(self, lam, strong=None, lambda_index=None):
        """Minimise at ``lam`` starting from the current state (warm start).

        ``strong`` is a boolean mask of variables surviving screening; the
        ever-active set is always included.  Returns the number of sweeps.
        """
        self.lam = lam
        self.r = self.residual_from_scratch()
        work = self.ever_active & self.usable
        if strong is None:
            strong = np.ones(self.p, dtype=bool)
        strong = (strong | work) & self.usable
        tol = self.tol
        sweeps = 0
        tightenings = 0
        while True:
            idx = np.flatnonzero(work)
            while idx.size:
                delta = self._sweep(idx, lam)
                sweeps += 1
                if sweeps > self.max_iter:
                    raise ConvergenceError(f"no convergence after {self.max_iter} sweeps", lambda_index)
                if delta < tol:
                    break
            viol = self._violations(strong & ~work, lam)
            if viol.any():
                work |= viol
                continue
            viol = self._violations(~strong & ~work, lam)
            if viol.any():
                work |= viol
                strong |= viol
                continue
            # Coefficient changes can stall before stationarity in
            # ill-conditioned blocks; tighten until the active KKT holds.
            if idx.size and tightenings < 6 and self._active_kkt(idx, lam) > 0.1 * self.kkt_tol:
                tol *= 0.1
                tightenings += 1
                continue
            break
        nz = (self.state.alpha != 0) | np.array([np.any(b != 0) for b in self.state.beta], bool)
        self.ever_active |= work | nz
        return sweeps

    def current_state(self):
        return self.state.copy()


def _screen_mask(engine, lam_k, lam_prev, residual):
    keep_a, keep_b = strong_rule_screen(
        lam_k, lam_prev, residual, engine.Xs, engine.bases, engine.gamma, engine.psi, engine.state.beta
    )
    return keep_a | keep_b


def fit_path_gaussian(dataset, bases, config, psi, lambdas=None, screen=True, tol=1e-7, kkt_tol=1e-6,
                      max_iter=100_000, monitor=None, append_zero=False, weighted_lambda_max=True):
    """Warm-started squared-error path over a decreasing lambda grid."""
    Xs, y = dataset.Xs, dataset.y
    gamma = float(config.gamma)
    usable = ~np.asarray(dataset.constant, bool)
    lmax = lambda_max(Xs, y, bases, gamma, weighted=weighted_lambda_max)
    if lambdas is None:
        if lmax <= 0:
            raise DegenerateResponseError("response has no signal along any predictor (lambda_max = 0)")
        lambdas = make_lambda_grid(lmax, config.num_lambda, config.lambda_min_ratio, append_zero=append_zero)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) >= 0):
        raise InvalidInputError("lambda grid must be strictly decreasing")

    engine = BlockCoordinateDescent(Xs, bases, psi, gamma, tol=tol, kkt_tol=kkt_tol, max_iter=max_iter,
                                    monitor=monitor, usable=usable)
    engine.set_response(y)
    driver = PathDriverState(residual=engine.r, active=np.zeros(len(bases), bool),
                             ever_active=engine.ever_active, lambda_grid=lambdas, tol=tol, kkt_tol=kkt_tol)
    points = []
    prev_lam = None
    for k, lam in enumerate(lambdas):
        strong = None
        if screen and prev_lam is not None:
            strong = _screen_mask(engine, lam, prev_lam, engine.residual_from_scratch())
        elif screen and lam < lmax:
            # First grid point below lambda_max: previous fit is the null model.
            strong = _screen_mask(engine, lam, lmax, engine.residual_from_scratch())
        sweeps = engine.solve(lam, strong=strong, lambda_index=k)
        driver.sweeps.append(sweeps)
        driver.residual = engine.r
        points.append(_make_point(engine, lam, dataset, bases, psi, gamma, "gaussian"))
        prev_lam = lam
    driver.active = engine.ever_active.copy()
    return _make_path(config, points, bases, psi, dataset, {"lambda_max": lmax, "sweeps": driver.sweeps})


def _make_point(engine, lam, dataset, bases, psi, gamma, family, state=None):
    st = engine.current_state() if state is None else state
    eta = linear_predictor(st, dataset.Xs, bases)
    return PathPoint(
        lam=float(lam),
        state=st,
        classes=classify_state(st),
        term_df=term_df(st, bases, lam, gamma, psi),
        deviance=deviance(dataset.y, eta, family),
    )


def _make_path(config, points, bases, psi, dataset, meta):
    return GamselPath(
        config=config,
        points=points,
        bases=list(bases),
        psi=np.asarray(psi, float),
        centers=dataset.centers.copy(),
        scales=dataset.scales.copy(),
        constant=np.asarray(dataset.constant, bool).copy(),
        names=list(dataset.names),
        meta=meta,
    )
