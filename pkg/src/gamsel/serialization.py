"""Versioned JSON model files.

Floats are written with Python's shortest round-trip ``repr``, so a saved
model predicts bit-for-bit like the in-memory one.  The n-row training
matrices (``U`` and the polynomial values) are not needed for prediction and
are only written with ``include_training=True``; otherwise they load as
zero-row arrays of the right width.
"""

from __future__ import annotations

import json

import numpy as np

from .exceptions import SchemaError
from .model import GamselConfig, GamselPath, GamselState, PathPoint, TermClass
from .spline_basis import OrthoPolyBasis, PseudoSplineBasis

FORMAT = "gamsel-model"
SCHEMA_VERSION = 1


def _arr(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _basis_to_dict(b: PseudoSplineBasis, include_training):
    poly = b.poly
    out = {
        "m": int(b.m),
        "D": _arr(b.D),
        "V": _arr(b.V),
        "variant": b.variant,
        "scale_applied": float(b.scale_applied),
        "lam": float(b.lam),
        "df": float(b.df),
        "degenerate": bool(b.degenerate),
        "notes": list(b.notes),
        "poly": {
            "k": int(poly.k),
            "shift": float(poly.shift),
            "scale": float(poly.scale),
            "a": _arr(poly.a),
            "b": _arr(poly.b),
            "n_train": int(poly.n_train),
        },
    }
    for name in ("knots", "knot_fits", "knot_gam", "proj", "R"):
        out[name] = _arr(getattr(b, name))
    if include_training:
        out["U"] = _arr(b.U)
        out["poly"]["values"] = _arr(poly.values)
    return out


def _mat(v, ncol):
    if v is None:
        return np.zeros((0, ncol))
    a = np.asarray(v, dtype=float)
    return a.reshape(-1, ncol) if a.size else np.zeros((0, ncol))


def _opt(v):
    return None if v is None else np.asarray(v, dtype=float)


def _basis_from_dict(d):
    pd = d["poly"]
    k, m = int(pd["k"]), int(d["m"])
    poly = OrthoPolyBasis(
        values=_mat(pd.get("values"), k),
        shift=float(pd["shift"]),
        scale=float(pd["scale"]),
        a=np.asarray(pd["a"], dtype=float),
        b=np.asarray(pd["b"], dtype=float),
        n_train=int(pd["n_train"]),
    )
    V = np.asarray(d["V"], dtype=float)
    if V.size == 0:
        V = np.zeros((0, 0))
    return PseudoSplineBasis(
        U=_mat(d.get("U"), m),
        D=np.asarray(d["D"], dtype=float),
        poly=poly,
        V=V,
        variant=d["variant"],
        scale_applied=float(d["scale_applied"]),
        lam=float(d["lam"]),
        df=float(d["df"]),
        knots=_opt(d["knots"]),
        knot_fits=_opt(d["knot_fits"]),
        knot_gam=_opt(d["knot_gam"]),
        proj=_opt(d["proj"]),
        R=_opt(d["R"]),
        degenerate=bool(d["degenerate"]),
        notes=tuple(d["notes"]),
    )


def path_to_dict(path: GamselPath, include_training=False) -> dict:
    points = []
    for pt in path.points:
        st = pt.state
        points.append({
            "lambda": float(pt.lam),
            "alpha0": float(st.alpha0),
            "alpha": _arr(st.alpha),
            "beta": [_arr(b) for b in st.beta],
            "classes": [TermClass(c).value for c in pt.classes],
            "term_df": _arr(pt.term_df),
            "deviance": float(pt.deviance),
        })
    return {
        "format": FORMAT,
        "schema_version": SCHEMA_VERSION,
        "config": path.config.to_dict(),
        "names": list(path.names),
        "centers": _arr(path.centers),
        "scales": _arr(path.scales),
        "constant": [bool(c) for c in path.constant],
        "psi": _arr(path.psi),
        "bases": [_basis_to_dict(b, include_training) for b in path.bases],
        "points": points,
        "meta": _jsonable(path.meta),
    }


def path_from_dict(d: dict) -> GamselPath:
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise SchemaError("not a gamsel model file")
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    try:
        config = GamselConfig(**d["config"])
        bases = [_basis_from_dict(b) for b in d["bases"]]
        points = []
        for pd in d["points"]:
            st = GamselState(
                alpha0=float(pd["alpha0"]),
                alpha=np.asarray(pd["alpha"], dtype=float),
                beta=[np.asarray(b, dtype=float) for b in pd["beta"]],
            )
            st.check(bases)
            points.append(PathPoint(
                lam=float(pd["lambda"]),
                state=st,
                classes=tuple(TermClass(c) for c in pd["classes"]),
                term_df=np.asarray(pd["term_df"], dtype=float),
                deviance=float(pd["deviance"]),
            ))
        path = GamselPath(
            config=config,
            points=points,
            bases=bases,
            psi=np.asarray(d["psi"], dtype=float),
            centers=np.asarray(d["centers"], dtype=float),
            scales=np.asarray(d["scales"], dtype=float),
            constant=np.asarray(d["constant"], dtype=bool),
            names=list(d["names"]),
            meta=d.get("meta", {}),
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"corrupt model file: {exc}") from exc
    p = len(path.names)
    if not (len(bases) == path.centers.size == path.scales.size == path.constant.size == path.psi.size == p):
        raise SchemaError("model file has inconsistent variable counts")
    return path


def serialize(path: GamselPath, include_training=False) -> bytes:
    return json.dumps(path_to_dict(path, include_training), allow_nan=False).encode("utf-8")


def deserialize(data: bytes | str) -> GamselPath:
    try:
        d = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"model file is not valid JSON: {exc}") from exc
    return path_from_dict(d)


def save_model(path: GamselPath, filename, include_training=False):
    with open(filename, "wb") as fh:
        fh.write(serialize(path, include_training))


def load_model(filename) -> GamselPath:
    with open(filename, "rb") as fh:
        return deserialize(fh.read())


__all__ = ["FORMAT", "SCHEMA_VERSION", "serialize", "deserialize", "save_model", "load_model",
           "path_to_dict", "path_from_dict"]
