"""Sparse generalized additive models with zero/linear/nonlinear term selection."""

__version__ = "0.1.0"

from .cv import CvResult, cv_path, kfold_split, select_lambda_1se
from .exceptions import (
    ConvergenceError,
    DegenerateResponseError,
    GamselError,
    InvalidInputError,
    NumericalDegeneracyError,
    OutOfRangeError,
    RankDeficiencyError,
    SchemaError,
)
from .fitting import build_bases, calibrate_psis, fit
from .model import (
    Dataset,
    GamselConfig,
    GamselPath,
    GamselState,
    PathPoint,
    TermClass,
    classify_term,
    objective,
    predict,
)
from .serialization import deserialize, load_model, save_model, serialize
from .simulate import Scenario, fdr_at_model_size, gen_scenario, misclassification, preset
from .spline_basis import (
    build_ortho_poly,
    build_pseudo_spline,
    calibrate_psi,
    evaluate_basis,
    subset_basis,
)

__all__ = [
    "__version__",
    "CvResult",
    "cv_path",
    "kfold_split",
    "select_lambda_1se",
    "ConvergenceError",
    "DegenerateResponseError",
    "GamselError",
    "InvalidInputError",
    "NumericalDegeneracyError",
    "OutOfRangeError",
    "RankDeficiencyError",
    "SchemaError",
    "build_bases",
    "calibrate_psis",
    "fit",
    "Dataset",
    "GamselConfig",
    "GamselPath",
    "GamselState",
    "PathPoint",
    "TermClass",
    "classify_term",
    "objective",
    "predict",
    "deserialize",
    "load_model",
    "save_model",
    "serialize",
    "Scenario",
    "fdr_at_model_size",
    "gen_scenario",
    "misclassification",
    "preset",
    "build_ortho_poly",
    "build_pseudo_spline",
    "calibrate_psi",
    "evaluate_basis",
    "subset_basis",
]
