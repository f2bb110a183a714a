"""Synthetic additive models with known zero/linear/nonlinear structure."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import InvalidInputError
from .model import TermClass

POLY_DEGREE = 5


@dataclass(frozen=True)
class Scenario:
    """Simulation design.

    Variables not listed in ``idx_linear`` or ``idx_nonlinear`` have no
    effect.  Noise is ``noise_sd`` if given, otherwise chosen so that
    ``var(signal) / noise_sd**2 == snr``.
    """

    n: int = 200
    p: int = 30
    idx_linear: tuple = (0, 1, 2, 3, 4, 5)
    idx_nonlinear: tuple = (6, 7, 8, 9)
    noise_sd: float | None = None
    snr: float | None = 3.0
    seed: int | None = 0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "idx_linear", tuple(int(i) for i in self.idx_linear))
        object.__setattr__(self, "idx_nonlinear", tuple(int(i) for i in self.idx_nonlinear))
        self.validate()

    def validate(self):
        if self.n < 2 or self.p < 1:
            raise InvalidInputError(f"need n >= 2 and p >= 1 (got n={self.n}, p={self.p})")
        lin, nl = set(self.idx_linear), set(self.idx_nonlinear)
        if len(lin) != len(self.idx_linear) or len(nl) != len(self.idx_nonlinear):
            raise InvalidInputError("duplicate indices in scenario")
        if lin & nl:
            raise InvalidInputError(f"variables {sorted(lin & nl)} are both linear and nonlinear")
        bad = [i for i in lin | nl if not 0 <= i < self.p]
        if bad:
            raise InvalidInputError(f"indices {sorted(bad)} outside 0..{self.p - 1}")
        if self.noise_sd is not None and self.noise_sd < 0:
            raise InvalidInputError("noise_sd must be non-negative")
        if self.noise_sd is None and (self.snr is None or self.snr <= 0):
            raise InvalidInputError("give noise_sd or a positive snr")

    def classes(self):
        out = [TermClass.ZERO] * self.p
        for i in self.idx_linear:
            out[i] = TermClass.LINEAR
        for i in self.idx_nonlinear:
            out[i] = TermClass.NONLINEAR
        return out

    def to_dict(self):
        d = asdict(self)
        d["idx_linear"] = list(self.idx_linear)
        d["idx_nonlinear"] = list(self.idx_nonlinear)
        return d


PRESETS = {
    "sec51": dict(n=200, p=30, idx_linear=range(0, 6), idx_nonlinear=range(6, 10), snr=3.0, name="sec51"),
    "fig3": dict(n=200, p=12, idx_linear=range(0, 3), idx_nonlinear=range(3, 6), snr=3.0, name="fig3"),
}


def preset(name, **overrides) -> Scenario:
    """Named scenario; keyword overrides replace individual fields."""
    if name not in PRESETS:
        raise InvalidInputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return Scenario(**kw)


@dataclass(frozen=True)
class TermTruth:
    """Generating function of one variable: ``scale * (poly(x) - center)``.

    ``coef`` holds polynomial coefficients in increasing degree; zero terms
    have an empty ``coef``.
    """

    kind: TermClass
    coef: tuple = ()
    center: float = 0.0
    scale: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if not self.coef:
            return np.zeros_like(x)
        return self.scale * (np.polynomial.polynomial.polyval(x, self.coef) - self.center)

    def to_dict(self):
        return {"kind": self.kind.value, "coef": list(self.coef), "center": self.center, "scale": self.scale}


@dataclass
class SimData:
    X: np.ndarray
    y: np.ndarray
    signal: np.ndarray
    truth: list
    noise_sd: float
    scenario: Scenario
    names: list = field(default_factory=list)

    @property
    def classes(self):
        return [t.kind for t in self.truth]

    def truth_dict(self):
        return {
            "scenario": self.scenario.to_dict(),
            "noise_sd": self.noise_sd,
            "names": list(self.names),
            "classes": [c.value for c in self.classes],
            "terms": [t.to_dict() for t in self.truth],
        }


def _term(kind, x, rng):
    if kind is TermClass.LINEAR:
        # Linear effect on the standardized predictor.
        beta = rng.standard_normal()
        mu, sd = float(x.mean()), float(x.std())
        return TermTruth(kind, (-mu / sd, 1.0 / sd), 0.0, beta)
    coef = tuple(rng.standard_normal(POLY_DEGREE + 1))
    f = np.polynomial.polynomial.polyval(x, coef)
    center = float(f.mean())
    sd = float(f.std())
    return TermTruth(kind, coef, center, 1.0 / sd if sd > 0 else 0.0)


def gen_scenario(scenario: Scenario) -> SimData:
    """Draw ``X ~ U(0,1)``, random term functions and ``y = sum f_j + noise``.

    Nonlinear terms are degree-5 polynomials with standard normal
    coefficients, centred and scaled to unit variance on the sample.  Linear
    terms are ``beta * standardized x`` with ``beta ~ N(0, 1)``.
    """
    rng = np.random.default_rng(scenario.seed)
    n, p = scenario.n, scenario.p
    X = rng.uniform(size=(n, p))
    classes = scenario.classes()
    truth = []
    for j, kind in enumerate(classes):
        truth.append(TermTruth(kind) if kind is TermClass.ZERO else _term(kind, X[:, j], rng))
    signal = np.column_stack([t(X[:, j]) for j, t in enumerate(truth)])
    f = signal.sum(axis=1)
    if scenario.noise_sd is not None:
        noise_sd = float(scenario.noise_sd)
    else:
        noise_sd = float(np.sqrt(f.var() / scenario.snr))
    y = f + noise_sd * rng.standard_normal(n)
    names = [f"x{j + 1}" for j in range(p)]
    return SimData(X=X, y=y, signal=signal, truth=truth, noise_sd=noise_sd, scenario=scenario, names=names)


# ---------------------------------------------------------------------------
# Selection metrics
# ---------------------------------------------------------------------------


def _as_classes(seq):
    return np.array([TermClass(c).value for c in seq])


def misclassification(truth, fitted) -> dict:
    """The four selection error rates.

    ``zeros``: true zeros fitted nonzero; ``linear``: true linear terms fitted
    zero or nonlinear; ``nonlinear``: true nonlinear terms fitted zero or
    linear; ``zero_vs_nonzero``: all variables whose zero/nonzero status is
    wrong, over ``p``.  A rate with an empty true class is 0.
    """
    t = _as_classes(truth)
    f = _as_classes(fitted)
    if t.size != f.size:
        raise InvalidInputError(f"{t.size} true classes but {f.size} fitted")

    def rate(cls):
        mask = t == cls.value
        return float(np.mean(f[mask] != cls.value)) if mask.any() else 0.0

    zero = TermClass.ZERO.value
    return {
        "zeros": rate(TermClass.ZERO),
        "linear": rate(TermClass.LINEAR),
        "nonlinear": rate(TermClass.NONLINEAR),
        "zero_vs_nonzero": float(np.mean((t == zero) != (f == zero))) if t.size else 0.0,
    }


def misclassification_path(truth, path) -> list:
    """``misclassification`` at every point of a fitted path."""
    return [misclassification(truth, pt.classes) for pt in path.points]


def fdr_at_model_size(truth, path) -> dict:
    """Smallest false discovery rate seen at each support size along the path.

    Size 0 maps to 0 by convention.
    """
    t = _as_classes(truth)
    zero = TermClass.ZERO.value
    out = {}
    for pt in path.points:
        sel = _as_classes(pt.classes) != zero
        size = int(sel.sum())
        fdr = float(np.mean(t[sel] == zero)) if size else 0.0
        out[size] = min(out.get(size, np.inf), fdr)
    return dict(sorted(out.items()))


__all__ = [
    "Scenario",
    "PRESETS",
    "preset",
    "TermTruth",
    "SimData",
    "gen_scenario",
    "misclassification",
    "misclassification_path",
    "fdr_at_model_size",
]
