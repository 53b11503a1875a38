"""Command-line entry point: ``curvebic <command> [flags]``.

Data goes to standard output as CSV or one-line ``key=value`` summaries;
diagnostics go to standard error. Exit codes: 0 success, 1 usage or
validation error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings

import numpy as np

from . import bayes, simlab
from .core import Family, ModelSpec, load_dataset
from .criteria import compute_criteria
from .curvature import STEP_RULES, HessianConfig, observed_information
from .errors import NumericalError, ValidationError
from .fitters import fit

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2
SEED_ENV = "CURVEBIC_SEED"
RANDOM_INTERCEPT = "1"

CRITERIA_COLUMNS = ("aic", "aicc", "bic", "caif", "icomp", "bic_hes", "bic_hes_sp",
                    "loglik", "p_params", "n_eff", "log_det")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _kv(pairs) -> str:
    return " ".join(f"{k}={_fmt(v)}" for k, v in pairs)


def _split(s: str | None) -> tuple[str, ...]:
    if not s:
        return ()
    return tuple(c.strip() for c in s.split(",") if c.strip())


def _family(name: str) -> Family:
    try:
        return Family(name)
    except ValueError:
        choices = ", ".join(f.value for f in Family)
        raise UsageError(f"--family: unknown family {name!r} (choose from {choices})") from None


def _spec(args) -> ModelSpec:
    fam = _family(args.family)
    rand = _split(args.random)
    intercept_random = RANDOM_INTERCEPT in rand
    rand = tuple(c for c in rand if c != RANDOM_INTERCEPT)
    if fam.has_random and not rand and not intercept_random:
        intercept_random = True
    return ModelSpec(fam, _split(args.fixed), rand, intercept_fixed=not args.no_intercept,
                     intercept_random=intercept_random, correlated_random=args.correlated)


def _fit(args):
    spec = _spec(args)
    data = load_dataset(args.data, spec)
    kw = {}
    if spec.family in (Family.GLMM_BINOMIAL, Family.GLMM_POISSON):
        kw["nAGQ"] = args.nagq
    if getattr(args, "n_eff", None) is not None:
        kw["n_eff"] = args.n_eff
    return spec, fit(data, spec, **kw)


def _hessian_cfg(args) -> HessianConfig:
    return HessianConfig(step_rule=args.step_rule, regularization_ridge=args.ridge)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_fit(args, out):
    _, f = _fit(args)
    pairs = [("family", f.family.value), ("loglik", f.loglik), ("converged", f.converged),
             ("iterations", f.iterations), ("n_eff", f.n_eff), ("p_params", f.p_params)]
    pairs += [(name, v) for name, v in zip(f.param_names, f.theta_hat)]
    print(_kv(pairs), file=out)
    if args.theta_out:
        _write_csv(args.theta_out, ["parameter", "estimate"],
                   [[n, _fmt(v)] for n, v in zip(f.param_names, f.theta_hat)])
    if args.hessian_out:
        curv = observed_information(f, _hessian_cfg(args))
        _write_csv(args.hessian_out, ["parameter", *f.param_names],
                   [[n, *(_fmt(v) for v in row)]
                    for n, row in zip(f.param_names, curv.information)])
    return EXIT_OK


def cmd_criteria(args, out):
    _, f = _fit(args)
    curv = observed_information(f, _hessian_cfg(args))
    rep = compute_criteria(f, curv)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CRITERIA_COLUMNS)
    w.writerow([_fmt(getattr(rep, c)) for c in CRITERIA_COLUMNS])
    if curv.regularized:
        print("warning: information matrix was regularized", file=sys.stderr)
    return EXIT_OK


# -- Bayes factors ----------------------------------------------------------

_BAYES_DEFAULTS = {"fixed": "", "intercept": "true", "prior_mean": "0", "prior_sd": "10",
                   "sigma2": "", "log_sigma2_mean": "0", "log_sigma2_sd": "2"}


def read_model_config(path) -> dict:
    """Bayesian linear model config, ``key = value`` per line.

    Keys: fixed (comma list), intercept (true/false), prior_mean, prior_sd,
    sigma2 (known noise variance; empty means estimated),
    log_sigma2_mean, log_sigma2_sd.
    """
    cfg = dict(_BAYES_DEFAULTS)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in cfg:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            cfg[key] = value
    return cfg


def _bayes_model(cfg: dict, data_path):
    cols = _split(cfg["fixed"])
    intercept = cfg["intercept"].lower() in ("1", "true", "yes")
    data = load_dataset(data_path, ModelSpec(Family.LINEAR, cols))
    X = data.design(cols, intercept)
    if X.shape[1] == 0:
        raise UsageError("a Bayesian model needs at least one coefficient")
    names = (("(Intercept)",) if intercept else ()) + cols
    try:
        sigma2 = float(cfg["sigma2"]) if cfg["sigma2"] else None
        model = bayes.gaussian_linear_model(
            X, names, float(cfg["prior_mean"]), float(cfg["prior_sd"]), sigma2,
            float(cfg["log_sigma2_mean"]), float(cfg["log_sigma2_sd"]))
    except ValueError as exc:
        raise UsageError(f"model config: {exc}") from None
    return model, data.y


def cmd_bf(args, out):
    m0, y = _bayes_model(read_model_config(args.model0), args.data)
    m1, _ = _bayes_model(read_model_config(args.model1), args.data)
    modes = (bayes.posterior_mode(m0, y), bayes.posterior_mode(m1, y))
    if args.method == "laplace":
        res = bayes.log_bf_laplace(m0, m1, y, modes=modes)
        pairs = [("method", "laplace"), ("log_bf", res.value), *res.components.items()]
    else:
        seed = _seed(args)
        ss = np.random.SeedSequence(seed)
        s0, s1 = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
        d0 = bayes.metropolis_sample(m0, y, modes[0][0], args.draws, s0,
                                     np.linalg.inv(modes[0][1]))
        d1 = bayes.metropolis_sample(m1, y, modes[1][0], args.draws, s1,
                                     np.linalg.inv(modes[1][1]))
        res = bayes.estimated_log_bf(m0, m1, y, d0, d1, modes=modes,
                                     include_prior_term=not args.no_prior_term)
        pairs = [("method", "lpd"), ("log_bf", res.value), *res.components.items(),
                 ("acceptance0", d0.acceptance_rate), ("acceptance1", d1.acceptance_rate),
                 ("seed", seed)]
    print(_kv(pairs), file=out)
    return EXIT_OK


# -- studies ----------------------------------------------------------------

def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"--seed: {SEED_ENV}={env!r} is not an integer") from None


def cmd_simulate(args, out):
    seed = _seed(args) if args.seed is not None or SEED_ENV in os.environ else None
    try:
        if args.config:
            cfg = simlab.load_config(args.config, args.study, seed=seed)
        else:
            cfg = simlab.parse_config("", args.study, seed=seed)
    except ValueError as exc:
        raise UsageError(f"--config: {exc}") from None
    res = simlab.run_study(cfg, args.study, jobs=args.jobs)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            res.to_csv(fh)
    else:
        res.to_csv(out)
    print(f"{args.study}: {len(res.cells)} cells, {res.fitted_models} fitted models, "
          f"{res.failure_count} failed fits, {len(res.unusable_cells)} unusable cells",
          file=sys.stderr)
    return EXIT_OK


def cmd_consistency(args, out):
    try:
        n_list = [int(v) for v in _split(args.n_list)]
    except ValueError:
        raise UsageError("--n-list: expected comma-separated integers") from None
    if not n_list:
        raise UsageError("--n-list: at least one sample size is required")
    rows = simlab.consistency_curve(args.p0, args.extra, n_list, args.reps, _seed(args))
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            simlab.consistency_to_csv(rows, fh)
    else:
        simlab.consistency_to_csv(rows, out)
    print(f"rate at n={rows[-1].n}: {rows[-1].rate:.4f}", file=sys.stderr)
    return EXIT_OK


def _model_flags(p):
    p.add_argument("--data", required=True, help="CSV dataset")
    p.add_argument("--family", required=True,
                   help="one of: " + ", ".join(f.value for f in Family))
    p.add_argument("--fixed", default="", help="fixed-effect columns, comma separated")
    p.add_argument("--random", default="",
                   help=f"random-effect columns; {RANDOM_INTERCEPT!r} is the random intercept")
    p.add_argument("--no-intercept", action="store_true", help="drop the fixed intercept")
    p.add_argument("--correlated", action="store_true",
                   help="unstructured 2x2 random intercept/slope covariance (GLMM)")
    p.add_argument("--nagq", type=int, default=7, help="quadrature points per dimension")
    p.add_argument("--step-rule", choices=sorted(STEP_RULES), default="quartic")
    p.add_argument("--ridge", type=float, default=0.0, help="ridge added to the information")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="curvebic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model and print the estimates")
    _model_flags(p)
    p.add_argument("--theta-out", help="write the estimates as CSV")
    p.add_argument("--hessian-out", help="write the observed information as CSV")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("criteria", help="print every information criterion")
    _model_flags(p)
    p.add_argument("--n-eff", type=float, help="effective sample size for the log n terms")
    p.set_defaults(func=cmd_criteria)

    p = sub.add_parser("bf", help="log Bayes factor between two Bayesian linear models")
    p.add_argument("--data", required=True)
    p.add_argument("--model0", required=True, help="key=value model config")
    p.add_argument("--model1", required=True, help="key=value model config")
    p.add_argument("--method", choices=("laplace", "lpd"), default="laplace")
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-prior-term", action="store_true",
                   help="leave n*log(mean prior ratio) out of the lpd estimate")
    p.set_defaults(func=cmd_bf)

    p = sub.add_parser("simulate", help="run a selection-rate study")
    p.add_argument("--study", required=True, choices=tuple(simlab.STUDY_CONFIGS))
    p.add_argument("--config", help="key=value config file (defaults otherwise)")
    p.add_argument("--out", help="output CSV (standard output otherwise)")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("consistency", help="selection rate of the true nested model vs n")
    p.add_argument("--p0", type=int, required=True)
    p.add_argument("--extra", type=int, required=True)
    p.add_argument("--n-list", required=True, help="increasing sample sizes, comma separated")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_consistency)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", None) is not None and args.jobs < 1:
            raise UsageError("--jobs: must be >= 1")
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return args.func(args, out)
    except UsageError as exc:
        print(f"curvebic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, OSError) as exc:
        print(f"curvebic: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"curvebic: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
