"""Per-variable pseudo-spline bases and diagonal penalties.

Each predictor gets an ``n x m`` basis ``U`` with orthonormal, mean-centred
columns (the first being the standardised predictor itself) and a diagonal
penalty ``D`` with ``D[0] = 0`` and ``D[1] = 1``.  The basis is a low-rank
approximation to the Demmler-Reinsch form of a cubic smoothing spline:
orthogonal polynomials (or their smoothed images) are pushed through the
smoother once and the resulting ``k x k`` matrix is eigendecomposed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.linalg import solveh_banded

from .exceptions import (
    InvalidInputError,
    NumericalDegeneracyError,
    OutOfRangeError,
    RankDeficiencyError,
)

__all__ = [
    "OrthoPolyBasis",
    "SmootherSpec",
    "PseudoSplineBasis",
    "FoldBasis",
    "build_ortho_poly",
    "make_smoother",
    "smoother_trace",
    "df_to_lambda",
    "apply_smoother",
    "penalty_matrix",
    "spline_predict",
    "build_pseudo_spline",
    "calibrate_psi",
    "evaluate_basis",
    "subset_basis",
]

# ---------------------------------------------------------------------------
# Orthogonal polynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrthoPolyBasis:
    """Discrete orthonormal polynomials on a fixed design.

    Columns are generated by the three-term recurrence
    ``b[j+1] q[j+1] = (t - a[j]) q[j] - b[j] q[j-1]`` on the affinely
    rescaled variable ``t = (x - shift) / scale``, started from the constant
    column ``1 / sqrt(n)``.  Storing ``a`` and ``b`` is enough to evaluate the
    same polynomials anywhere.
    """

    values: np.ndarray
    shift: float
    scale: float
    a: np.ndarray
    b: np.ndarray
    n_train: int

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def evaluate(self, x0) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        return _recurrence(x0, self.shift, self.scale, self.a, self.b, self.n_train, self.k)


def _recurrence(x, shift, scale, a, b, n_train, k):
    t = (x - shift) / scale
    out = np.empty((t.shape[0], k))
    out[:, 0] = 1.0 / np.sqrt(n_train)
    prev = np.zeros_like(t)
    for j in range(k - 1):
        v = (t - a[j]) * out[:, j] - b[j] * prev
        prev = out[:, j]
        out[:, j + 1] = v / b[j + 1]
    return out


def build_ortho_poly(x, k: int) -> OrthoPolyBasis:
    """Orthonormal polynomial basis of degree ``k - 1`` on the points ``x``.

    If ``x`` has fewer than ``k`` distinct values the degree is lowered so the
    basis keeps full column rank.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.shape[0]
    if n < 2:
        raise InvalidInputError(f"need at least 2 observations, got {n}")
    if k < 1:
        raise InvalidInputError(f"k must be positive, got {k}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("x contains non-finite values")
    k = min(int(k), np.unique(x).size)

    lo, hi = float(x.min()), float(x.max())
    shift = 0.5 * (lo + hi)
    scale = 0.5 * (hi - lo) if hi > lo else 1.0
    t = (x - shift) / scale

    a = np.zeros(max(k - 1, 0))
    b = np.zeros(k)
    q = np.empty((n, k))
    q[:, 0] = 1.0 / np.sqrt(n)
    prev = np.zeros(n)
    for j in range(k - 1):
        tq = t * q[:, j]
        a[j] = tq @ q[:, j]
        v = tq - a[j] * q[:, j] - b[j] * prev
        b[j + 1] = np.linalg.norm(v)
        if b[j + 1] <= 1e-12 * np.sqrt(n):
            raise NumericalDegeneracyError("orthogonal polynomial recurrence broke down")
        prev = q[:, j]
        q[:, j + 1] = v / b[j + 1]

    # Re-run the recurrence so training values are exactly what evaluate() gives.
    values = _recurrence(x, shift, scale, a, b, n, k)
    return OrthoPolyBasis(values=values, shift=shift, scale=scale, a=a, b=b, n_train=n)


# ---------------------------------------------------------------------------
# Cubic smoothing spline (Reinsch form on unique knots)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmootherSpec:
    """A natural cubic smoothing spline smoother for a fixed design.

    Duplicate x values are collapsed onto ``unique_knots`` with
    ``multiplicities`` as weights; ``inverse`` maps each original row to its
    knot.
    """

    unique_knots: np.ndarray
    multiplicities: np.ndarray
    inverse: np.ndarray
    lam: float
    target_df: float | None = None

    @property
    def n_unique(self) -> int:
        return self.unique_knots.size


def _collapse(x):
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("x contains non-finite values")
    knots, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    return knots, counts.astype(float), inverse


def _reinsch_bands(knots):
    """Non-zero diagonals of the Reinsch ``Q`` (u x u-2) and ``R`` matrices."""
    h = np.diff(knots)
    q0 = 1.0 / h[:-1]
    q2 = 1.0 / h[1:]
    q1 = -q0 - q2
    r0 = (h[:-1] + h[1:]) / 3.0
    r1 = h[1:-1] / 6.0
    return q0, q1, q2, r0, r1


def _qt_winv_q(q0, q1, q2, w):
    """Bands (main, first, second super-diagonal) of ``Q^T W^{-1} Q``."""
    wi = 1.0 / w
    b0 = q0**2 * wi[:-2] + q1**2 * wi[1:-1] + q2**2 * wi[2:]
    b1 = q1[:-1] * q0[1:] * wi[1:-2] + q2[:-1] * q1[1:] * wi[2:-1]
    b2 = q2[:-2] * q0[2:] * wi[2:-2]
    return b0, b1, b2


def _qt_mul(q0, q1, q2, B):
    return q0[:, None] * B[:-2] + q1[:, None] * B[1:-1] + q2[:, None] * B[2:]


def _q_mul(q0, q1, q2, G):
    u = G.shape[0] + 2
    out = np.zeros((u, G.shape[1]))
    out[:-2] += q0[:, None] * G
    out[1:-1] += q1[:, None] * G
    out[2:] += q2[:, None] * G
    return out


def penalty_matrix(knots) -> np.ndarray:
    """Dense roughness penalty ``K = Q R^{-1} Q^T`` on sorted distinct knots."""
    knots = np.asarray(knots, dtype=float)
    u = knots.size
    if u < 3:
        return np.zeros((u, u))
    q0, q1, q2, r0, r1 = _reinsch_bands(knots)
    Q = np.zeros((u, u - 2))
    idx = np.arange(u - 2)
    Q[idx, idx] = q0
    Q[idx + 1, idx] = q1
    Q[idx + 2, idx] = q2
    R = np.diag(r0) + np.diag(r1, 1) + np.diag(r1, -1)
    return Q @ np.linalg.solve(R, Q.T)


class _TraceEvaluator:
    """Computes ``tr(S_lambda)`` repeatedly for one knot set.

    With ``R = L L'`` and ``G = W^{-1/2} Q``, ``tr(S) = 2 + tr(M^{-1} R)`` for
    ``M = R + lam G'G``.  Forming ``M`` squares the conditioning of ``G``,
    whose entries grow like ``1/h^2`` for closely spaced knots, so instead the
    banded triangular factor of ``M`` is obtained by Givens rotations of the
    stacked matrix ``[L'; sqrt(lam) G]``.  Cost is O(u) per evaluation.
    """

    def __init__(self, knots, weights):
        self.u = knots.size
        if self.u < 3:
            return
        q0, q1, q2, r0, r1 = _reinsch_bands(knots)
        self.r0, self.r1 = r0, r1
        self.q = (q0, q1, q2)
        self.sw = np.sqrt(np.asarray(weights, dtype=float))
        N = r0.size
        lii = np.empty(N)
        lsub = np.zeros(N)
        prev = 0.0
        for i in range(N):
            lii[i] = np.sqrt(r0[i] - prev * prev)
            if i + 1 < N:
                prev = lsub[i] = r1[i] / lii[i]
        self.chol = (lii, lsub)

    def __call__(self, lam: float) -> float:
        if lam <= 0:
            return float(self.u)
        if self.u < 3:
            return 2.0
        q0, q1, q2 = self.q
        d, l1, l2 = _stacked_band_factor(self.chol[0], self.chol[1], q0, q1, q2, self.sw, float(lam))
        s0, s1 = _band_inverse_from_factor(d, l1, l2)
        return float(2.0 + np.sum(s0 * self.r0) + 2.0 * np.sum(s1 * self.r1))


@numba.njit(cache=True)
def _rotate_in(T, v, c):
    """Fold the row ``v`` (nonzeros in columns ``c..c+2``) into ``T`` by Givens rotations."""
    N = T.shape[0]
    j = c
    while j < N and (v[0] != 0.0 or v[1] != 0.0 or v[2] != 0.0):
        b = v[0]
        if b != 0.0:
            a = T[j, 0]
            rr = np.hypot(a, b)
            cs = a / rr
            sn = b / rr
            T[j, 0] = rr
            for k in range(1, 3):
                t = T[j, k]
                T[j, k] = cs * t + sn * v[k]
                v[k] = -sn * t + cs * v[k]
        v[0] = v[1]
        v[1] = v[2]
        v[2] = 0.0
        j += 1


@numba.njit(cache=True)
def _stacked_band_factor(lii, lsub, q0, q1, q2, sw, lam):
    """``M = T'T`` for ``M = L L' + lam G'G``; returns ``M = L1 diag(d) L1'``.

    ``T`` is upper triangular with two super-diagonals.  Rows of ``L'`` and
    ``sqrt(lam) G`` are rotated in by leading column, so the rows of ``T``
    below the insertion point are still empty and fill-in stays local.
    """
    N = lii.size
    T = np.zeros((N + 2, 3))
    sl = np.sqrt(lam)
    v = np.zeros(3)
    for j in range(N):
        v[0] = lii[j]
        v[1] = lsub[j] if j + 1 < N else 0.0
        v[2] = 0.0
        _rotate_in(T, v, j)
        # G rows whose first nonzero sits in column j: rows 0-2 for j = 0,
        # row j + 2 afterwards.  Row r has entries in columns r-2, r-1, r.
        for r in range(0 if j == 0 else j + 2, j + 3):
            v[0] = sl * q2[r - 2] / sw[r] if r >= 2 else 0.0
            v[1] = sl * q1[r - 1] / sw[r] if 1 <= r <= N else 0.0
            v[2] = sl * q0[r] / sw[r] if r < N else 0.0
            lead = r - 2
            while lead < 0:
                v[0] = v[1]
                v[1] = v[2]
                v[2] = 0.0
                lead += 1
            _rotate_in(T, v, lead)
    T = T[:N]
    d = T[:, 0] * T[:, 0]
    l1 = T[:, 1] / T[:, 0]
    l2 = T[:, 2] / T[:, 0]
    return d, l1, l2


@numba.njit(cache=True)
def _band_inverse_from_factor(d, l1, l2):
    """Main and first off-diagonal of ``(L1 diag(d) L1')^{-1}``.

    ``L1`` is unit lower triangular with sub-diagonals ``l1`` and ``l2``;
    this is the Hutchinson-de Hoog backward recursion.
    """
    N = d.size
    s0 = np.zeros(N)
    s1 = np.zeros(N)
    for i in range(N - 1, -1, -1):
        s_i1 = 0.0
        s_i2 = 0.0
        if i + 2 < N:
            s_i2 = -l1[i] * s1[i + 1] - l2[i] * s0[i + 2]
            s_i1 = -l1[i] * s0[i + 1] - l2[i] * s1[i + 1]
        elif i + 1 < N:
            s_i1 = -l1[i] * s0[i + 1]
        s0[i] = 1.0 / d[i] - l1[i] * s_i1 - l2[i] * s_i2
        if i + 1 < N:
            s1[i] = s_i1
    return s0, s1[: max(N - 1, 0)]


def smoother_trace(spec_or_knots, lam=None, multiplicities=None) -> float:
    """Degrees of freedom ``tr(S_lambda)`` of the smoother."""
    if isinstance(spec_or_knots, SmootherSpec):
        knots, w, lam = spec_or_knots.unique_knots, spec_or_knots.multiplicities, spec_or_knots.lam
    else:
        knots = np.asarray(spec_or_knots, dtype=float)
        w = np.ones(knots.size) if multiplicities is None else np.asarray(multiplicities, float)
    return _TraceEvaluator(knots, w)(lam)


def df_to_lambda(knots, multiplicities, df: float, tol: float = 1e-6, max_iter: int = 200) -> float:
    """Smoothing parameter whose smoother has trace ``df``.

    Bisection on ``log(lambda)``; the trace decreases monotonically from the
    number of unique knots (``lambda = 0``) to 2 (``lambda -> inf``).
    """
    knots = np.asarray(knots, dtype=float)
    w = np.ones(knots.size) if multiplicities is None else np.asarray(multiplicities, float)
    u = knots.size
    if not 2.0 < df < u:
        raise OutOfRangeError(f"df={df} must lie strictly between 2 and {u} (unique values)")
    trace = _TraceEvaluator(knots, w)

    span = knots[-1] - knots[0]
    lam0 = span**3 / u
    lo = hi = np.log(lam0)
    while trace(np.exp(lo)) < df:
        lo -= 4.0
    while trace(np.exp(hi)) > df:
        hi += 4.0
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        t = trace(np.exp(mid))
        if abs(t - df) < tol:
            break
        if t > df:
            lo = mid
        else:
            hi = mid
    return float(np.exp(mid))


def make_smoother(x, df: float | None = None, lam: float | None = None) -> SmootherSpec:
    """Smoother for the design ``x``, calibrated either by ``df`` or ``lam``."""
    knots, counts, inverse = _collapse(x)
    if (df is None) == (lam is None):
        raise InvalidInputError("give exactly one of df or lam")
    if df is not None:
        lam = df_to_lambda(knots, counts, df)
    elif lam < 0:
        raise OutOfRangeError("lam must be non-negative")
    return SmootherSpec(knots, counts, inverse, float(lam), df)


def _smooth_unique(spec: SmootherSpec, Bu):
    """Smooth per-knot values ``Bu``; returns fitted knot values and g''."""
    knots, w, lam = spec.unique_knots, spec.multiplicities, spec.lam
    if knots.size < 3:
        raise InvalidInputError("smoothing needs at least 3 unique x values")
    q0, q1, q2, r0, r1 = _reinsch_bands(knots)
    b0, b1, b2 = _qt_winv_q(q0, q1, q2, w)
    N = r0.size
    ab = np.zeros((3, N))
    ab[2] = r0 + lam * b0
    ab[1, 1:] = r1 + lam * b1
    ab[0, 2:] = lam * b2
    rhs = _qt_mul(q0, q1, q2, Bu)
    gam = solveh_banded(ab, rhs)
    g = Bu - lam * _q_mul(q0, q1, q2, gam) / w[:, None]
    return g, gam


def apply_smoother(spec: SmootherSpec, B, return_knot_fits: bool = False):
    """Smooth every column of ``B`` (rows aligned with the design)."""
    B = np.asarray(B, dtype=float)
    vector = B.ndim == 1
    if vector:
        B = B[:, None]
    if B.shape[0] != spec.inverse.size:
        raise InvalidInputError(f"B has {B.shape[0]} rows, smoother expects {spec.inverse.size}")
    Bu = np.zeros((spec.n_unique, B.shape[1]))
    np.add.at(Bu, spec.inverse, B)
    Bu /= spec.multiplicities[:, None]
    g, gam = _smooth_unique(spec, Bu)
    out = g[spec.inverse]
    if vector:
        out = out[:, 0]
    if return_knot_fits:
        return out, g, gam
    return out


def spline_predict(knots, g, gam, x0) -> np.ndarray:
    """Evaluate natural cubic splines given knot values and interior g''.

    ``g`` is ``u x c`` and ``gam`` is ``(u-2) x c``.  Outside the knot range
    the spline is continued linearly.
    """
    knots = np.asarray(knots, float)
    x0 = np.asarray(x0, float)
    g = np.asarray(g, float)
    gam = np.asarray(gam, float)
    c = g.shape[1]
    u = knots.size
    G2 = np.zeros((u, c))
    G2[1:-1] = gam
    h = np.diff(knots)
    out = np.empty((x0.size, c))

    idx = np.clip(np.searchsorted(knots, x0, side="right") - 1, 0, u - 2)
    inside = (x0 >= knots[0]) & (x0 <= knots[-1])
    xi = x0[inside]
    i = idx[inside]
    hi = h[i]
    dl = (xi - knots[i])[:, None]
    dr = (knots[i + 1] - xi)[:, None]
    hh = hi[:, None]
    out[inside] = (dl * g[i + 1] + dr * g[i]) / hh - (dl * dr / 6.0) * (
        (1.0 + dl / hh) * G2[i + 1] + (1.0 + dr / hh) * G2[i]
    )

    left = x0 < knots[0]
    if np.any(left):
        slope = (g[1] - g[0]) / h[0] - h[0] * G2[1] / 6.0
        out[left] = g[0] + (x0[left] - knots[0])[:, None] * slope
    right = x0 > knots[-1]
    if np.any(right):
        slope = (g[-1] - g[-2]) / h[-1] + h[-1] * G2[-2] / 6.0
        out[right] = g[-1] + (x0[right] - knots[-1])[:, None] * slope
    return out


# ---------------------------------------------------------------------------
# Pseudo-spline bases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PseudoSplineBasis:
    """Orthonormal basis ``U`` (n x m) and diagonal penalty ``D`` for one variable.

    ``U[:, 0]`` is the centred, unit-norm predictor with ``D[0] = 0``.  The
    remaining columns are ``B @ V`` where ``B`` holds the nonlinear polynomial
    columns (or their smoothed, re-orthogonalised images for the ``"Q"``
    variant) and ``V`` the eigenvectors of ``B^T S B``.
    """

    U: np.ndarray
    D: np.ndarray
    poly: OrthoPolyBasis
    V: np.ndarray
    variant: str = "poly"
    scale_applied: float = 1.0
    lam: float = 0.0
    df: float = 0.0
    # Q-variant evaluation data: smoother fits of the nonlinear P columns on
    # the unique knots, the projection removed before QR, and the R factor.
    knots: np.ndarray | None = None
    knot_fits: np.ndarray | None = None
    knot_gam: np.ndarray | None = None
    proj: np.ndarray | None = None
    R: np.ndarray | None = None
    degenerate: bool = False
    notes: tuple = field(default_factory=tuple)

    @property
    def m(self) -> int:
        return self.D.size

    @property
    def Dstar(self) -> np.ndarray:
        Ds = self.D.copy()
        Ds[0] = 1.0
        return Ds

    @property
    def transform(self) -> np.ndarray:
        """``k x m`` map from polynomial (or Q) coordinates to ``U`` coordinates."""
        k = self.poly.k
        T = np.zeros((k, self.m))
        if self.degenerate:
            return T
        T[1, 0] = 1.0
        if self.m > 1:
            T[2:, 1:] = self.V
        return T

    def evaluate(self, x0) -> np.ndarray:
        return evaluate_basis(self, x0)


def _linear_only(x, poly, note, degenerate=False):
    n = np.asarray(x).size
    if degenerate:
        U = np.zeros((n, 1))
    else:
        U = poly.values[:, 1:2].copy()
    return PseudoSplineBasis(
        U=U,
        D=np.zeros(1),
        poly=poly,
        V=np.zeros((0, 0)),
        variant="poly",
        degenerate=degenerate,
        notes=(note,),
    )


def build_pseudo_spline(x, k: int = 10, df: float = 5.0, variant: str = "poly", name=None) -> PseudoSplineBasis:
    """Pseudo-spline basis of ``k`` polynomial columns (intercept included).

    The effective basis size is ``min(k, u - 1)`` for ``u`` distinct values of
    ``x``, and ``df`` is capped at the effective size.
    ``k <= 2`` (or effective ``df <= 2``) yields a linear-only basis.
    """
    if variant not in ("poly", "Q"):
        raise InvalidInputError(f"variant must be 'poly' or 'Q', got {variant!r}")
    x = np.asarray(x, dtype=float).ravel()
    label = name if name is not None else "x"
    n_unique = np.unique(x).size
    if n_unique < 2:
        poly = OrthoPolyBasis(
            values=np.full((x.size, 1), 1.0 / np.sqrt(x.size)),
            shift=float(x[0]) if x.size else 0.0,
            scale=1.0,
            a=np.zeros(0),
            b=np.zeros(1),
            n_train=x.size,
        )
        return _linear_only(x, poly, f"{label}: constant predictor", degenerate=True)

    # Two distinct values still determine the linear column.
    k_eff = min(int(k), max(n_unique - 1, 2))
    df_eff = min(float(df), float(k_eff))
    poly = build_ortho_poly(x, k_eff)
    if k_eff <= 2 or df_eff <= 2.0:
        return _linear_only(x, poly, f"{label}: linear-only basis (k={k_eff}, df={df_eff:g})")
    if df >= k:
        warnings.warn(f"{label}: df={df} is not below the basis size k={k}", stacklevel=2)

    # The smoother df must lie strictly inside (2, n_unique).
    df_smooth = min(df_eff, n_unique - 0.5)
    spec = make_smoother(x, df=df_smooth)
    P = poly.values

    knots = knot_fits = knot_gam = proj = Rfac = None
    if variant == "Q":
        SP, knot_fits, knot_gam = apply_smoother(spec, P[:, 2:], return_knot_fits=True)
        proj = P[:, :2].T @ SP
        C = SP - P[:, :2] @ proj
        Qm, Rfac = np.linalg.qr(C)
        signs = np.sign(np.diag(Rfac))
        signs[signs == 0] = 1.0
        Qm = Qm * signs
        Rfac = Rfac * signs[:, None]
        B = Qm
        knots = spec.unique_knots
    else:
        B = P[:, 2:]

    SB = apply_smoother(spec, B)
    M = B.T @ SB
    M = 0.5 * (M + M.T)
    ds, V = np.linalg.eigh(M)
    order = np.argsort(ds)[::-1]
    ds, V = ds[order], V[:, order]
    for j in range(V.shape[1]):
        piv = np.argmax(np.abs(V[:, j]))
        if V[piv, j] < 0:
            V[:, j] = -V[:, j]
    if np.any(ds <= 0.0):
        raise NumericalDegeneracyError("non-positive eigenvalue in the projected smoother", variable=label)
    if np.any(ds >= 1.0 - 1e-12):
        raise NumericalDegeneracyError("projected smoother has a unit eigenvalue outside the linear space", variable=label)
    D_nl = 1.0 / ds - 1.0
    scale = float(D_nl[0])
    D = np.concatenate([[0.0], D_nl / scale])
    D[1] = 1.0
    D = np.maximum.accumulate(D)
    U = np.column_stack([P[:, 1], B @ V])
    return PseudoSplineBasis(
        U=U,
        D=D,
        poly=poly,
        V=V,
        variant=variant,
        scale_applied=scale,
        lam=spec.lam,
        df=df_smooth,
        knots=knots,
        knot_fits=knot_fits,
        knot_gam=knot_gam,
        proj=proj,
        R=Rfac,
    )


def calibrate_psi(D, df_target: float, tol: float = 1e-8, max_iter: int = 400) -> float:
    """Multiplier ``psi`` with ``sum(1 / (1 + psi * D)) == df_target``."""
    D = np.asarray(D, dtype=float)
    m = D.size
    n_free = int(np.sum(D == 0.0))
    if not (max(n_free, 1) <= df_target <= m):
        raise OutOfRangeError(f"df_target={df_target} must lie in [{max(n_free, 1)}, {m}]")

    def df_of(psi):
        return float(np.sum(1.0 / (1.0 + psi * D)))

    if df_target >= m - tol:
        return 0.0
    if df_target <= n_free + tol:
        raise OutOfRangeError("df_target equal to the unpenalised dimension needs psi = inf")
    lo, hi = -30.0, 30.0
    while df_of(np.exp(lo)) < df_target:
        lo -= 10.0
    while df_of(np.exp(hi)) > df_target:
        hi += 10.0
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        d = df_of(np.exp(mid))
        if abs(d - df_target) < tol:
            break
        if d > df_target:
            lo = mid
        else:
            hi = mid
    return float(np.exp(mid))


def evaluate_basis(basis: PseudoSplineBasis, x0) -> np.ndarray:
    """Rows of the basis evaluated at new predictor values ``x0``."""
    x0 = np.asarray(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x0)):
        raise InvalidInputError("x0 contains non-finite values")
    if basis.degenerate:
        return np.zeros((x0.size, 1))
    P0 = basis.poly.evaluate(x0)
    if basis.m == 1:
        return P0[:, 1:2]
    if basis.variant == "Q":
        SP0 = spline_predict(basis.knots, basis.knot_fits, basis.knot_gam, x0)
        C0 = SP0 - P0[:, :2] @ basis.proj
        B0 = np.linalg.solve(basis.R.T, C0.T).T
    else:
        B0 = P0[:, 2:]
    return np.column_stack([P0[:, 1], B0 @ basis.V])


# ---------------------------------------------------------------------------
# Row subsetting for cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldBasis:
    """Basis re-expressed on a subset of rows.

    ``U_sub[:, 0]`` is the predictor re-centred and re-normalised on the kept
    rows; the remaining columns come from the SVD of the nonlinear block
    (after projecting out the unpenalised constant and linear directions)
    scaled by ``D^{-1/2}``.  ``D_sub = [0, D2^{-2}]``.
    """

    U_sub: np.ndarray
    D_sub: np.ndarray
    lambda_scale: float
    parent: PseudoSplineBasis
    lin_center: float
    lin_scale: float
    nl_center: np.ndarray
    nl_lin_coef: np.ndarray
    W: np.ndarray
    keep: np.ndarray

    @property
    def U(self):
        return self.U_sub

    @property
    def D(self):
        return self.D_sub

    @property
    def Dstar(self):
        Ds = self.D_sub.copy()
        Ds[0] = 1.0
        return Ds

    @property
    def m(self):
        return self.D_sub.size

    @property
    def degenerate(self):
        return self.parent.degenerate

    def back_map(self, x0) -> np.ndarray:
        """Evaluate the subset basis at new points via the parent basis."""
        full = evaluate_basis(self.parent, x0)
        lin = (full[:, 0] - self.lin_center) / self.lin_scale
        if self.m == 1:
            return lin[:, None]
        nl = full[:, 1:] - self.nl_center - np.outer(lin, self.nl_lin_coef)
        return np.column_stack([lin, nl @ self.W])

    evaluate = back_map


def subset_basis(basis: PseudoSplineBasis, keep) -> FoldBasis:
    """Re-orthonormalise ``basis`` on the rows ``keep`` without rebuilding it."""
    keep = np.asarray(keep)
    if keep.dtype == bool:
        keep = np.flatnonzero(keep)
    n = basis.U.shape[0]
    n1 = keep.size
    m = basis.m
    if n1 <= m:
        raise RankDeficiencyError(f"{n1} kept rows cannot support a basis with {m} columns")
    U1 = basis.U[keep]
    lin = U1[:, 0]
    lin_center = float(lin.mean())
    lc = lin - lin_center
    lin_scale = float(np.linalg.norm(lc))
    if basis.degenerate or lin_scale == 0.0:
        raise RankDeficiencyError("predictor is constant on the kept rows")
    l = lc / lin_scale
    if m == 1:
        return FoldBasis(
            U_sub=l[:, None],
            D_sub=np.zeros(1),
            lambda_scale=n1 / n,
            parent=basis,
            lin_center=lin_center,
            lin_scale=lin_scale,
            nl_center=np.zeros(0),
            nl_lin_coef=np.zeros(0),
            W=np.zeros((0, 0)),
            keep=keep,
        )
    N1 = U1[:, 1:]
    nl_center = N1.mean(axis=0)
    Nc = N1 - nl_center
    coef = l @ Nc
    Np = Nc - np.outer(l, coef)
    dinv = 1.0 / np.sqrt(basis.D[1:])
    Ustar, d2, V2t = np.linalg.svd(Np * dinv, full_matrices=False)
    if d2[-1] <= 1e-12 * d2[0]:
        raise RankDeficiencyError("subset nonlinear block is rank deficient")
    V2 = V2t.T
    for j in range(V2.shape[1]):
        piv = np.argmax(np.abs(V2[:, j]))
        if V2[piv, j] < 0:
            V2[:, j] = -V2[:, j]
            Ustar[:, j] = -Ustar[:, j]
    W = (dinv[:, None] * V2) / d2[None, :]
    return FoldBasis(
        U_sub=np.column_stack([l, Ustar]),
        D_sub=np.concatenate([[0.0], d2**-2.0]),
        lambda_scale=n1 / n,
        parent=basis,
        lin_center=lin_center,
        lin_scale=lin_scale,
        nl_center=nl_center,
        nl_lin_coef=coef,
        W=W,
        keep=keep,
    )
