"""Command-line interface.

Subcommands::

    noisyglm fit    --data D.csv --label y --rho0 R0 --rho1 R1 --out DIR
    noisyglm infer  --fit-dir DIR [--alpha 0.05] [--out DIR2]
    noisyglm gap    --data X.csv --beta B.csv --rho0 R0 --rho1 R1 --out DIR
    noisyglm study  --config study.json --out DIR

Exit codes: 0 success, 2 malformed input, 3 solver did not converge.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import NoisyGLMError, RankDeficiencyError, SolverError
from .experiments import StudySpec, run_study, write_study_outputs
from .fileio import (
    now_iso, read_csv, read_manifest, read_numeric_csv, sha256_file, write_csv, write_manifest,
)
from .glm_core import NoiseModel
from .inference import (
    PsiSpec, cor1_bound_check, debias, info_matrices, inverse_hessian_theta, nodewise_theta,
    weighted_gram,
)
from .losses import LIKELIHOOD, SURROGATE, Dataset
from .optim import MAX_ITER, FitConfig, cv_select_lambda, fit, lambda_grid
from .simgen import PuSpec, case_control_gamma, pu_noise_rates

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3

DEFAULT_SEED = 12345
DEFAULT_TOL_GRADMAP = 1e-10
INTERCEPT_NAME = "(intercept)"

_LOSS_ALIASES = {"lik": LIKELIHOOD, "sur": SURROGATE, LIKELIHOOD: LIKELIHOOD, SURROGATE: SURROGATE}


class InputError(NoisyGLMError):
    pass


# ----------------------------------------------------------------------------
# input helpers


def load_dataset(path, label=None, columns=None, add_intercept=False):
    """Read a CSV with a header row into a :class:`Dataset` plus column names.

    With ``label=None`` the returned labels are a dummy zero vector (used for
    design-only commands).
    """
    if not os.path.exists(path):
        raise InputError(f"{path}: no such file")
    header, M = read_numeric_csv(path)
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names")
    if label is not None and label not in header:
        raise InputError(f"{path}: label column {label!r} not found")
    if columns:
        missing = [c for c in columns if c not in header]
        if missing:
            raise InputError(f"{path}: columns not found: {', '.join(missing)}")
        names = list(columns)
    else:
        names = [h for h in header if h != label]
    if label in names:
        raise InputError("the label column cannot also be a feature")
    if not names and not add_intercept:
        raise InputError("no feature columns")
    X = M[:, [header.index(c) for c in names]] if names else np.empty((M.shape[0], 0))
    if not np.all(np.isfinite(M)):
        raise InputError(f"{path}: non-finite values (NaN or inf) in the data")
    intercept_col = None
    if add_intercept:
        if INTERCEPT_NAME in names:
            raise InputError(f"column name {INTERCEPT_NAME!r} is reserved")
        X = np.column_stack([np.ones(M.shape[0]), X])
        names = [INTERCEPT_NAME] + names
        intercept_col = 0
    if label is not None:
        z = M[:, header.index(label)]
        if not np.all((z == 0) | (z == 1)):
            raise InputError(f"{path}: label column {label!r} must contain only 0 and 1")
    else:
        z = np.zeros(M.shape[0])
    return Dataset(X, z, intercept_col=intercept_col, names=names)


def resolve_noise(args):
    """Noise model from ``--rho0/--rho1`` or the PU flags, plus a provenance dict."""
    pu = [args.pu_pi, args.pu_nl, args.pu_nu]
    explicit = args.rho0 is not None or args.rho1 is not None
    if any(v is not None for v in pu):
        if explicit:
            raise InputError("give either --rho0/--rho1 or the --pu-* flags, not both")
        if any(v is None for v in pu):
            raise InputError("--pu-pi, --pu-nl and --pu-nu must be given together")
        spec = PuSpec(args.pu_pi, int(args.pu_nl), int(args.pu_nu))
        nm = pu_noise_rates(spec)
        info = {"pu": {"pi": spec.pi, "n_labeled": spec.n_labeled, "n_unlabeled": spec.n_unlabeled,
                       "rho1": nm.rho1, "gamma": case_control_gamma(spec)}}
        return nm, info
    nm = NoiseModel(args.rho0 or 0.0, args.rho1 or 0.0)
    return nm, {}


def _name_indices(names, wanted):
    out = []
    for w in wanted:
        if w not in names:
            raise InputError(f"unknown column {w!r} in --unpenalized")
        out.append(names.index(w))
    return tuple(out)


def _split(s):
    return [c.strip() for c in s.split(",") if c.strip()] if s else []


def _fit_config(args, data, lam):
    unpen = _name_indices(data.names, _split(args.unpenalized))
    return FitConfig(
        loss_kind=_LOSS_ALIASES[args.loss], lam=lam, radius=args.radius, unpenalized=unpen,
        init=args.init, max_iter=args.max_iter, tol_obj=args.tol_obj,
        tol_gradmap=args.tol_gradmap,
    )


# ----------------------------------------------------------------------------
# commands


def cmd_fit(args):
    started = now_iso()
    nm, noise_info = resolve_noise(args)
    data = load_dataset(args.data, args.label, _split(args.columns), args.add_intercept)
    if args.radius is not None and _LOSS_ALIASES[args.loss] != LIKELIHOOD:
        raise InputError("--radius applies only to --loss lik")
    cv_curve = grid = None
    if args.cv:
        base = _fit_config(args, data, 0.0)
        grid = lambda_grid(data, nm, base, n_lambda=args.n_lambda)
        lam, cv_curve = cv_select_lambda(data, nm, base, folds=args.folds, grid=grid, seed=args.seed)
    else:
        lam = args.lam
    cfg = _fit_config(args, data, lam)
    res = fit(data, nm, cfg)

    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "coefficients.csv"), ("name", "estimate"),
              zip(data.names, res.beta))
    write_csv(os.path.join(args.out, "trace.csv"), ("iteration", "objective"),
              enumerate(res.objective_trace))
    if cv_curve is not None:
        write_csv(os.path.join(args.out, "cv_curve.csv"), ("lambda", "cv_loss"), zip(grid, cv_curve))
    config = {
        "data": os.path.abspath(args.data),
        "label": args.label,
        "columns": data.names,
        "add_intercept": args.add_intercept,
        "rho0": nm.rho0,
        "rho1": nm.rho1,
        "loss": cfg.loss_kind,
        "lambda": lam,
        "cv": args.cv,
        "folds": args.folds if args.cv else None,
        "radius": res.radius,
        "unpenalized": [data.names[i] for i in res.unpenalized],
        "init": args.init,
        "max_iter": cfg.max_iter,
        "tol_obj": cfg.tol_obj,
        "tol_gradmap": cfg.tol_gradmap,
        **noise_info,
    }
    write_manifest(args.out, "fit", config, args.seed, inputs=[args.data], started=started, extra={
        "result": {"termination": res.termination, "iterations": res.iterations,
                   "gradmap_norm": res.gradmap_norm, "objective": float(res.objective_trace[-1])},
    })
    if res.termination == MAX_ITER:
        print(f"noisyglm: warning: stopped at max_iter={cfg.max_iter} without converging", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _theta_stats(Theta, S):
    E = np.eye(S.shape[0]) - Theta @ S
    return {
        "tau2": 1.0 / np.diag(Theta),
        "kkt": np.max(np.abs(E), axis=1),
        "theta_l1": np.abs(Theta).sum(axis=1),
    }


def cmd_infer(args):
    started = now_iso()
    m = read_manifest(args.fit_dir)
    if m.get("command") != "fit":
        raise InputError(f"{args.fit_dir} is not the output of 'noisyglm fit'")
    cfg = m["config"]
    data_path = cfg["data"]
    if not os.path.exists(data_path):
        raise InputError(f"data file {data_path} recorded in the manifest is missing")
    recorded = m.get("inputs", {}).get(data_path)
    if recorded and recorded != sha256_file(data_path):
        raise InputError(f"{data_path} changed since the fit (checksum mismatch)")
    names = cfg["columns"]
    feature_cols = [c for c in names if c != "(intercept)"] if cfg["add_intercept"] else names
    data = load_dataset(data_path, cfg["label"], feature_cols, cfg["add_intercept"])

    header, rows = read_csv(os.path.join(args.fit_dir, "coefficients.csv"))
    coef_names = [r[0] for r in rows]
    if coef_names != data.names:
        raise InputError(
            f"coefficients ({len(coef_names)}) do not match the stored design ({data.p} columns)"
        )
    beta = np.array([float(r[1]) for r in rows])

    nm = NoiseModel(cfg["rho0"], cfg["rho1"])
    psi = PsiSpec.from_loss(cfg["loss"], nm)
    method = args.theta
    if method == "auto":
        method = "inverse" if data.p < data.n else "nodewise"
    if method == "inverse":
        Theta = inverse_hessian_theta(data.X, beta, psi)
        diag = _theta_stats(Theta, weighted_gram(data.X, beta, psi))
    else:
        lam = args.nodewise_lambda
        Theta, diag = nodewise_theta(data.X, beta, psi, lambdas=lam)
    rep = debias(data, nm, beta, psi, Theta, args.alpha, diag)

    out = args.out or os.path.join(args.fit_dir, "inference")
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "inference.csv"),
              ("name", "estimate", "debiased", "se", "ci_low", "ci_high"),
              zip(data.names, rep.beta_hat, rep.beta_db, rep.se, rep.ci_low, rep.ci_high))
    write_csv(os.path.join(out, "theta_diag.csv"), ("name", "tau2", "kkt_residual", "theta_l1"),
              zip(data.names, diag["tau2"], diag["kkt"], diag["theta_l1"]))
    coef_path = os.path.join(args.fit_dir, "coefficients.csv")
    write_manifest(out, "infer", {"fit_dir": os.path.abspath(args.fit_dir), "alpha": args.alpha,
                                  "theta": method, "nodewise_lambda": args.nodewise_lambda},
                   m.get("seed"), inputs=[data_path, coef_path], started=started)
    return EXIT_OK


def _read_beta(path, names):
    header, rows = read_csv(path)
    if len(header) == 1:
        vals = [float(r[0]) for r in rows]
        if len(vals) != len(names):
            raise InputError(f"{path}: {len(vals)} coefficients for {len(names)} design columns")
        return np.array(vals)
    if len(header) != 2:
        raise InputError(f"{path}: expected columns (name, value)")
    table = {r[0]: float(r[1]) for r in rows}
    missing = [n for n in names if n not in table]
    if missing or len(table) != len(names):
        raise InputError(f"{path}: coefficient names do not match the design columns")
    return np.array([table[n] for n in names])


def cmd_gap(args):
    started = now_iso()
    nm, noise_info = resolve_noise(args)
    data = load_dataset(args.data, None, _split(args.columns), args.add_intercept)
    beta = _read_beta(args.beta, data.names)
    try:
        info = info_matrices(data.X, beta, nm)
        lhs, rhs = cor1_bound_check(data.X, beta, nm)
    except RankDeficiencyError as exc:
        cols = [data.names[j] for j in exc.columns]
        raise InputError(f"design is rank deficient; offending columns: {', '.join(cols) or 'unknown'}") from None
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "gap.csv"), ("metric", "value"), [
        ("gap", info.gap), ("gap2", info.gap ** 2), ("rd", lhs), ("rel_l2_diff", info.rel_l2_diff),
        ("amse_lik", info.amse_lik), ("amse_sur", info.amse_sur), ("cor1_rhs", rhs),
    ])
    write_manifest(args.out, "gap", {"data": os.path.abspath(args.data), "columns": data.names,
                                     "add_intercept": args.add_intercept, "rho0": nm.rho0,
                                     "rho1": nm.rho1, **noise_info},
                   None, inputs=[args.data, args.beta], started=started)
    return EXIT_OK


def cmd_study(args):
    started = now_iso()
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{args.config}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.config}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise InputError(f"{args.config}: expected a JSON object")
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        spec = StudySpec.from_dict(cfg)
    except TypeError as exc:
        raise InputError(f"{args.config}: {exc}") from None
    result = run_study(spec, workers=args.workers)
    write_study_outputs(result, args.out, started=started, config_path=args.config)
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def _add_noise_flags(p):
    g = p.add_argument_group("noise model")
    g.add_argument("--rho0", type=float, help="P(z=1 | y=0)")
    g.add_argument("--rho1", type=float, help="P(z=0 | y=1)")
    g.add_argument("--pu-pi", type=float, help="PU sampling: P(y=1 | unlabeled)")
    g.add_argument("--pu-nl", type=int, help="PU sampling: number of labeled positives")
    g.add_argument("--pu-nu", type=int, help="PU sampling: number of unlabeled samples")


def _add_design_flags(p):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--columns", help="comma-separated feature columns (default: all but the label)")
    p.add_argument("--add-intercept", action="store_true", help="prepend an unpenalized intercept")


def build_parser():
    parser = argparse.ArgumentParser(prog="noisyglm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the likelihood or surrogate estimator")
    _add_design_flags(p)
    p.add_argument("--label", required=True, help="name of the 0/1 label column")
    _add_noise_flags(p)
    p.add_argument("--loss", choices=sorted(_LOSS_ALIASES), default="lik")
    lam = p.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float, default=0.0, help="l1 penalty weight")
    lam.add_argument("--cv", action="store_true", help="choose lambda by k-fold cross-validation")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--n-lambda", type=int, default=50)
    p.add_argument("--radius", type=float, help="l2-ball radius for the likelihood loss")
    p.add_argument("--unpenalized", help="comma-separated columns left out of the penalty")
    p.add_argument("--init", choices=("zeros", "convex"), default="zeros")
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--tol-obj", type=float, default=0.0)
    p.add_argument("--tol-gradmap", type=float, default=DEFAULT_TOL_GRADMAP)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", help="de-biased estimates and confidence intervals for a fit")
    p.add_argument("--fit-dir", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--theta", choices=("auto", "inverse", "nodewise"), default="auto",
                   help="approximate inverse Hessian: exact inverse or node-wise lasso")
    p.add_argument("--nodewise-lambda", type=float)
    p.add_argument("--out", help="output directory (default: FIT_DIR/inference)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gap", help="information matrices, subspace gap and efficiency loss")
    _add_design_flags(p)
    p.add_argument("--beta", required=True, help="CSV of coefficients (name,value) or one column")
    _add_noise_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("study", help="run a Monte-Carlo study from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "alpha", None) is not None and not 0 < args.alpha < 1:
        parser.error("--alpha must lie in (0, 1)")
    try:
        return args.func(args)
    except SolverError as exc:
        print(f"noisyglm: solver failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (NoisyGLMError, OSError) as exc:
        print(f"noisyglm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
