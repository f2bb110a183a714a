"""Command-line interface: ``gamsel fit | predict | cv | simulate``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
failure.  Options may also come from a ``--config`` file of ``key=value``
lines (``#`` starts a comment); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import sys
import warnings

import numpy as np
from scipy.special import expit

from . import __version__
from .cv import ERRORS, MODES, cv_path
from .exceptions import ConvergenceError, GamselError, InvalidInputError, NumericalDegeneracyError
from .fitting import fit
from .model import FAMILIES, VARIANTS, GamselConfig, TermClass
from .serialization import load_model, save_model
from .simulate import PRESETS, fdr_at_model_size, gen_scenario, misclassification_path, preset

logger = logging.getLogger("gamsel")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2

FIT_COLUMNS = ["lambda_index", "lambda", "variable", "alpha", "beta_norm", "class", "term_df"]
CV_COLUMNS = ["lambda_index", "lambda", "mean_error", "se", "n_nonzero", "is_min", "is_1se"]
METRIC_COLUMNS = ["lambda_index", "lambda", "n_nonzero", "zeros", "linear", "nonlinear", "zero_vs_nonzero"]


class UsageError(InvalidInputError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; that code is reserved for
    # numerical failures here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------


def read_csv(filename):
    """Header and float matrix from a comma-separated file.

    Every field must parse as a finite number; the error names the first
    offending data row (1-based, header excluded) and column.
    """
    try:
        fh = open(filename, newline="", encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read {filename}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{filename}: empty file (a header row is required)") from None
        except csv.Error as exc:
            raise InvalidInputError(f"{filename}: {exc}") from exc
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise InvalidInputError(f"{filename}: duplicate column names in header")
        rows = []
        bad = []
        try:
            for i, rec in enumerate(reader, start=1):
                if not rec or all(not f.strip() for f in rec):
                    continue
                if len(rec) != len(header):
                    raise InvalidInputError(
                        f"{filename}: row {i} has {len(rec)} fields, header has {len(header)}")
                vals = []
                for name, field in zip(header, rec):
                    try:
                        v = float(field)
                    except ValueError:
                        v = math.nan
                    if not math.isfinite(v):
                        bad.append((i, name, field))
                    vals.append(v)
                rows.append(vals)
        except csv.Error as exc:
            raise InvalidInputError(f"{filename}: line {reader.line_num}: {exc}") from exc
    if bad:
        shown = ", ".join(f"row {i} column {c!r} ({v!r})" for i, c, v in bad[:10])
        more = f" and {len(bad) - 10} more" if len(bad) > 10 else ""
        raise InvalidInputError(f"{filename}: non-numeric or missing values at {shown}{more}")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


@contextlib.contextmanager
def _open_out(filename):
    if filename in (None, "-"):
        yield sys.stdout
    else:
        with open(filename, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(filename, columns, rows):
    with _open_out(filename) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _split_xy(header, data, response, filename):
    if response not in header:
        raise InvalidInputError(f"{filename}: response column {response!r} not found in header {header}")
    j = header.index(response)
    names = [h for h in header if h != response]
    if not names:
        raise InvalidInputError(f"{filename}: no predictor columns")
    X = np.delete(data, j, axis=1)
    return X, data[:, j], names


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def read_config_file(filename):
    """``key=value`` pairs; keys use the long flag name with ``-`` or ``_``."""
    out = {}
    try:
        fh = open(filename, encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read config file {filename}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInputError(f"{filename}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _int_list(text):
    text = str(text).strip()
    if not text:
        return []
    return [int(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _number_or_list(kind):
    def conv(text):
        parts = [t for t in str(text).replace(";", ",").split(",") if t.strip()]
        try:
            vals = [kind(t) for t in parts]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not vals:
            raise argparse.ArgumentTypeError("empty value")
        return vals[0] if len(vals) == 1 else vals

    return conv


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--response", default="y", help="name of the response column (default: y)")
    g.add_argument("--family", choices=FAMILIES, default="gaussian")
    g.add_argument("--gamma", type=float, default=0.5, help="linear/nonlinear mixing in [0, 1] (default: 0.5)")
    g.add_argument("--degree", type=_number_or_list(int), default=10,
                   help="basis size k per variable, intercept included; one value or a comma list (default: 10)")
    g.add_argument("--df", type=_number_or_list(float), default=5.0,
                   help="end-of-path degrees of freedom; one value or a comma list (default: 5)")
    g.add_argument("--num-lambda", type=int, default=50)
    g.add_argument("--lambda-min-ratio", type=float, default=0.01)
    g.add_argument("--variant", choices=VARIANTS, default="poly", help="pseudo-spline construction")
    g.add_argument("--tol", type=float, default=1e-7, help="coordinate descent tolerance")


def _config_from_args(args) -> GamselConfig:
    return GamselConfig(
        gamma=args.gamma,
        degrees=args.degree,
        dfs=args.df,
        num_lambda=args.num_lambda,
        lambda_min_ratio=args.lambda_min_ratio,
        family=args.family,
        variant=args.variant,
    )


def build_parser():
    parser = _Parser(prog="gamsel", description="Sparse generalized additive models with term selection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="file of key=value option defaults")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (1 = sequential)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a regularization path")
    p.add_argument("input", help="training CSV with header")
    p.add_argument("--model", required=True, help="output model file (JSON)")
    p.add_argument("--summary", default="-", help="per-(lambda, variable) table (default: stdout)")
    p.add_argument("--include-training", action="store_true", help="store training basis matrices in the model")
    _add_model_args(p)

    p = sub.add_parser("predict", help="predict from a saved model")
    p.add_argument("model", help="model file written by 'gamsel fit'")
    p.add_argument("input", help="CSV with the training predictor columns")
    p.add_argument("--lambda-index", type=_int_list, default=None,
                   help="comma-separated path indices (default: all)")
    p.add_argument("--output", default="-", help="predictions CSV (default: stdout)")

    p = sub.add_parser("cv", help="K-fold cross-validation")
    p.add_argument("input", help="training CSV with header")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=MODES, default="regenerate")
    p.add_argument("--error", choices=ERRORS, default=None,
                   help="held-out error (default: mse for gaussian, deviance for binomial)")
    p.add_argument("--output", default="-", help="CV table (default: stdout)")
    p.add_argument("--summary-json", default=None, help="JSON summary file (default: stderr)")
    p.add_argument("--model", default=None, help="also save the full-data model")
    _add_model_args(p)

    p = sub.add_parser("simulate", help="generate a synthetic scenario and optionally fit it")
    p.add_argument("--preset", choices=sorted(PRESETS), default="sec51")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--idx-linear", type=_int_list, default=None, help="0-based comma list")
    p.add_argument("--idx-nonlinear", type=_int_list, default=None, help="0-based comma list")
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--snr", type=float, default=None, help="signal-to-noise variance ratio")
    p.add_argument("--data", required=True, help="output dataset CSV (response column 'y')")
    p.add_argument("--truth", required=True, help="output truth JSON")
    p.add_argument("--fit", action="store_true", help="fit the path and report selection metrics")
    p.add_argument("--metrics", default="-", help="per-lambda misclassification table (default: stdout)")
    p.add_argument("--fdr", default=None, help="FDR-at-model-size table")
    _add_model_args(p)
    return parser


def _apply_config(parser, argv):
    """Feed config-file values to the subcommand parser as defaults."""
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config_file(known.config)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    cmd = next((a for a in argv if a in sub_action.choices), None)
    targets = [parser] + ([sub_action.choices[cmd]] if cmd else [])
    for key, raw in values.items():
        for target in targets:
            action = next((a for a in target._actions if a.dest == key), None)
            if action is None:
                continue
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                val = raw.lower() in ("1", "true", "yes", "on")
            elif action.choices is not None and raw not in action.choices:
                raise InvalidInputError(f"config {key}={raw!r}: choose from {list(action.choices)}")
            else:
                try:
                    val = action.type(raw) if action.type else raw
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise InvalidInputError(f"config {key}={raw!r}: {exc}") from exc
            if action.required:
                action.required = False
            target.set_defaults(**{key: val})
            break
        else:
            raise InvalidInputError(f"config file {known.config}: unknown key {key!r}")


def _validate(args):
    """Flag checks that must fail before any data is read."""
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    if hasattr(args, "gamma"):
        _config_from_args(args)  # range checks on gamma, num_lambda, ...
        if args.tol <= 0:
            raise UsageError("--tol must be positive")
    if getattr(args, "folds", None) is not None and args.folds < 2:
        raise UsageError("--folds must be >= 2")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _fit_rows(path):
    for i, pt in enumerate(path.points):
        for j, name in enumerate(path.names):
            b = pt.state.beta[j]
            yield (i, pt.lam, name, float(pt.state.alpha[j]), float(np.linalg.norm(b)),
                   TermClass(pt.classes[j]).value, float(pt.term_df[j]))


def _load_training(args):
    header, data = read_csv(args.input)
    X, y, names = _split_xy(header, data, args.response, args.input)
    if X.shape[0] < 2:
        raise InvalidInputError(f"{args.input}: need at least 2 data rows")
    return X, y, names


def cmd_fit(args):
    config = _config_from_args(args)
    X, y, names = _load_training(args)
    path = fit(X, y, config, names=names, threads=args.threads, tol=args.tol)
    path.meta["response"] = args.response
    for j in np.flatnonzero(path.constant):
        logger.warning("predictor %r is constant and is held at zero", names[j])
    save_model(path, args.model, include_training=args.include_training)
    write_table(args.summary, FIT_COLUMNS, _fit_rows(path))
    return EXIT_OK


def cmd_predict(args):
    path = load_model(args.model)
    header, data = read_csv(args.input)
    response = path.meta.get("response")
    missing = [n for n in path.names if n not in header]
    extra = [h for h in header if h not in path.names and h != response]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing columns {missing}")
        if extra:
            parts.append(f"unexpected columns {extra}")
        raise InvalidInputError(f"{args.input}: " + "; ".join(parts))
    X0 = data[:, [header.index(n) for n in path.names]]
    L = len(path.points)
    idx = list(range(L)) if args.lambda_index is None else args.lambda_index
    bad = [i for i in idx if not 0 <= i < L]
    if bad:
        raise InvalidInputError(f"lambda indices {bad} outside 0..{L - 1}")
    columns = [f"eta_{i}" for i in idx]
    binomial = path.family == "binomial"
    if binomial:
        columns += [f"prob_{i}" for i in idx]
    if X0.shape[0] == 0 or not idx:
        write_table(args.output, columns, [])
        return EXIT_OK
    eta = path.predict(X0, index=np.array(idx, dtype=int))
    out = eta
    if binomial:
        out = np.hstack([eta, expit(eta)])
    write_table(args.output, columns, (list(map(float, row)) for row in out))
    return EXIT_OK


def cmd_cv(args):
    config = _config_from_args(args)
    X, y, names = _load_training(args)
    if not 2 <= args.folds <= X.shape[0]:
        raise UsageError(f"--folds must lie in [2, {X.shape[0]}] for {X.shape[0]} rows")
    res = cv_path(X, y, config, K=args.folds, seed=args.seed, mode=args.mode, error=args.error, names=names,
                  threads=args.threads, tol=args.tol)
    path = res.path
    path.meta["response"] = args.response
    if args.model:
        save_model(path, args.model)
    rows = []
    for i, lam in enumerate(res.lambdas):
        nz = sum(c != TermClass.ZERO for c in path.points[i].classes)
        rows.append((i, float(lam), float(res.mean_error[i]), float(res.se[i]), nz,
                     i == res.index_min, i == res.index_1se))
    write_table(args.output, CV_COLUMNS, rows)
    summary = res.summary()
    summary["selected_1se"] = {
        name: TermClass(c).value for name, c in zip(path.names, path.points[res.index_1se].classes)
    }
    text = json.dumps(summary, indent=2)
    if args.summary_json:
        with open(args.summary_json, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text, file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args):
    config = _config_from_args(args)
    scen = preset(args.preset, seed=args.seed, n=args.n, p=args.p, idx_linear=args.idx_linear,
                  idx_nonlinear=args.idx_nonlinear, noise_sd=args.noise_sd, snr=args.snr)
    sim = gen_scenario(scen)
    write_table(args.data, sim.names + ["y"], (list(map(float, row)) for row in np.column_stack([sim.X, sim.y])))
    truth = sim.truth_dict()
    if args.fit:
        path = fit(sim.X, sim.y, config, names=sim.names, threads=args.threads, tol=args.tol)
        rates = misclassification_path(sim.classes, path)
        rows = []
        for i, (pt, r) in enumerate(zip(path.points, rates)):
            nz = sum(c != TermClass.ZERO for c in pt.classes)
            rows.append((i, pt.lam, nz, r["zeros"], r["linear"], r["nonlinear"], r["zero_vs_nonzero"]))
        write_table(args.metrics, METRIC_COLUMNS, rows)
        fdr = fdr_at_model_size(sim.classes, path)
        if args.fdr:
            write_table(args.fdr, ["model_size", "fdr"], sorted(fdr.items()))
        best = int(np.argmin([r["zero_vs_nonzero"] for r in rates]))
        truth["fit"] = {"config": config.to_dict(), "best_index": best, "best_rates": rates[best]}
    with open(args.truth, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2)
        fh.write("\n")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv, "simulate": cmd_simulate}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except GamselError as exc:
        print(f"gamsel: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="gamsel: %(levelname)s: %(message)s")
    try:
        _validate(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except (ConvergenceError, NumericalDegeneracyError) as exc:
        print(f"gamsel: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (GamselError, ValueError, OSError) as exc:
        print(f"gamsel: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
