"""Command-line front end.

Every subcommand writes ``config.json`` (the fully resolved settings) into
its output directory, so a run can be repeated from that file alone::

    mmesbm fit --edges net.csv --n-actors 71 --groups 4 --out run1
    mmesbm fit --config run1/config.json

Settings resolve as command-line flags, then the ``--config`` file, then
built-in defaults. Exit status is 0 on success, 1 for bad input and 2 when
a fit fails numerically.
"""

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from .beta import NumericalError
from .bootstrap import (
    bootstrap_beta,
    curvature_report,
    summarize,
    write_samples_csv,
    write_summary_csv,
)
from .diagnostics import (
    eom_scores,
    gof_compare,
    write_eom_csv,
    write_separation_csv,
)
from .generator import GenerativeSpec, sample_network
from .network import (
    CovariateMatrix,
    InputError,
    load_adjacency_matrix,
    load_covariates,
    load_edge_list,
    make_folds,
    write_edge_list,
)
from .selection import cross_validate, link_probabilities, roc_auc
from .vb import FitResult, ModelConfig, fit

log = logging.getLogger("mmesbm")

DEFAULTS = {
    "edges": None,
    "adjacency": None,
    "n_actors": None,
    "covariates": None,
    "schema": None,
    "out": ".",
    "seed": 0,
    "jobs": None,
    "groups": None,
    "restarts": 5,
    "max_iterations": 500,
    "tolerance": 1e-6,
    "phi_inner": 3,
    "init": "spectral",
    "init_noise": 0.1,
    "estimate_beta": True,
    "clip_bound": 30.0,
    "folds": 10,
    "replicates": 100,
    "simulations": 100,
    "draw_theta": False,
    "fit": None,
    "spec": None,
}

# settings each subcommand records in its config echo
_RELEVANT = {
    "fit": ["edges", "adjacency", "n_actors", "covariates", "schema", "out", "seed",
            "groups", "restarts", "max_iterations", "tolerance", "phi_inner", "init",
            "init_noise", "estimate_beta", "clip_bound"],
    "cv": ["edges", "adjacency", "n_actors", "covariates", "schema", "out", "seed", "jobs",
           "groups", "folds", "restarts", "max_iterations", "tolerance", "phi_inner", "init",
           "init_noise", "estimate_beta", "clip_bound"],
    "simulate": ["spec", "covariates", "schema", "n_actors", "out", "seed"],
    "bootstrap": ["fit", "covariates", "schema", "n_actors", "out", "seed", "jobs",
                  "replicates", "draw_theta", "restarts"],
    "gof": ["fit", "edges", "adjacency", "n_actors", "covariates", "schema", "out", "seed",
            "simulations", "draw_theta"],
    "predict": ["fit", "edges", "adjacency", "n_actors", "out"],
}


def _fmt(v):
    return repr(float(v))


def read_config_file(path):
    """Settings from a JSON object or ``key = value`` lines (``#`` comments)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json") or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise InputError(f"{path}: config must be a JSON object")
    else:
        data = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}, line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                data[key] = json.loads(value)
            except json.JSONDecodeError:
                data[key] = value
    data = {k.replace("-", "_"): v for k, v in data.items() if k != "command"}
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise InputError(f"{path}: unknown setting(s) {unknown}")
    return data


def resolve(args):
    """Merge defaults < config file < explicit flags."""
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            settings[key] = value
    if settings["jobs"] is None:
        settings["jobs"] = os.cpu_count() or 1
    return settings


def _add_common(p, inputs=True, model=False):
    p.add_argument("--config", help="settings file (JSON or key = value lines)")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--jobs", type=int, help="parallel workers (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    if inputs:
        p.add_argument("--edges", help="edge list, one 'source,target' per line, 1-based")
        p.add_argument("--adjacency", help="dense N x N 0/1 matrix instead of an edge list")
        p.add_argument("--n-actors", type=int, help="number of actors (needed with --edges)")
        p.add_argument("--covariates", help="actor covariate CSV")
        p.add_argument("--schema", help="JSON mapping covariate columns to kinds")
    if model:
        p.add_argument("--restarts", type=int, help="random restarts (default 5)")
        p.add_argument("--max-iterations", type=int, help="maximum sweeps (default 500)")
        p.add_argument("--tolerance", type=float, help="relative ELBO tolerance (default 1e-6)")
        p.add_argument("--phi-inner", type=int, help="role update alternations per sweep")
        p.add_argument("--init", choices=["spectral", "random"])
        p.add_argument("--init-noise", type=float)
        p.add_argument("--no-estimate-beta", dest="estimate_beta", action="store_const",
                       const=False, help="keep the covariate coefficients at their start")
        p.add_argument("--clip-bound", type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmesbm",
        description="Mixed-membership of experts stochastic blockmodel.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the model for one number of groups")
    _add_common(p, model=True)
    p.add_argument("--groups", type=int, help="number of groups G")

    p = sub.add_parser("cv", help="k-fold cross-validation over a range of G")
    _add_common(p, model=True)
    p.add_argument("--groups", help="G values, e.g. '1..9' or '2,3,5'")
    p.add_argument("--folds", type=int, help="number of folds (default 10)")

    p = sub.add_parser("simulate", help="draw a network from a generative spec")
    _add_common(p, inputs=False)
    p.add_argument("--spec", help="JSON spec with beta and theta (or theta_shapes)")
    p.add_argument("--covariates", help="actor covariate CSV")
    p.add_argument("--schema", help="JSON mapping covariate columns to kinds")
    p.add_argument("--n-actors", type=int, help="actor count when there are no covariates")

    p = sub.add_parser("bootstrap", help="parametric bootstrap of the coefficients")
    _add_common(p, inputs=False)
    p.add_argument("--fit", help="fit.json from a previous run")
    p.add_argument("--covariates", help="actor covariate CSV used for the fit")
    p.add_argument("--schema", help="JSON mapping covariate columns to kinds")
    p.add_argument("--n-actors", type=int)
    p.add_argument("--replicates", type=int, help="bootstrap replicates (default 100)")
    p.add_argument("--restarts", type=int, help="restarts per refit (default: as the fit)")
    p.add_argument("--draw-theta", action="store_const", const=True,
                   help="draw block probabilities from their posterior in each replicate")

    p = sub.add_parser("gof", help="simulation-based goodness of fit")
    _add_common(p)
    p.add_argument("--fit", help="fit.json from a previous run")
    p.add_argument("--simulations", type=int, help="simulated networks (default 100)")
    p.add_argument("--draw-theta", action="store_const", const=True)

    p = sub.add_parser("predict", help="fitted link probabilities for every dyad")
    _add_common(p)
    p.add_argument("--fit", help="fit.json from a previous run")
    return parser


# ---------------------------------------------------------------- helpers

def _open_text(path):
    try:
        return open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _with_file(path, fn, *args):
    with _open_text(path) as fh:
        try:
            return fn(fh, *args)
        except InputError as exc:
            raise InputError(f"{path}: {exc}") from None


def load_network(s, required=True):
    if s["adjacency"]:
        return _with_file(s["adjacency"], load_adjacency_matrix)
    if s["edges"]:
        if not s["n_actors"]:
            raise InputError("--n-actors is required with --edges")
        return _with_file(s["edges"], load_edge_list, int(s["n_actors"]))
    if required:
        raise InputError("give --edges (with --n-actors) or --adjacency")
    return None


def load_design(s, n_actors):
    if not s["covariates"]:
        if s["schema"]:
            raise InputError("--schema given without --covariates")
        return CovariateMatrix.intercept_only(n_actors)
    if not s["schema"]:
        raise InputError("--covariates needs a --schema file")
    with _open_text(s["schema"]) as fh:
        try:
            schema = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{s['schema']}: invalid JSON ({exc})") from None
    return _with_file(s["covariates"], load_covariates, schema, n_actors)


def model_config(s, n_groups):
    return ModelConfig(
        n_groups=n_groups,
        max_iterations=int(s["max_iterations"]),
        elbo_rel_tolerance=float(s["tolerance"]),
        phi_inner_iterations=int(s["phi_inner"]),
        seed=s["seed"],
        n_restarts=int(s["restarts"]),
        init_noise=float(s["init_noise"]),
        estimate_beta=bool(s["estimate_beta"]),
        clip_bound=float(s["clip_bound"]),
        init=s["init"],
    )


def parse_group_range(text):
    """'3' -> [3]; '1..9' -> [1, ..., 9]; '2,3,5' -> [2, 3, 5]."""
    if isinstance(text, int):
        return [text]
    if isinstance(text, list):
        return [int(g) for g in text]
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
            values = list(range(lo, hi + 1))
        else:
            values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"cannot parse group range {text!r}") from None
    if not values or min(values) < 1:
        raise InputError(f"group range {text!r} must list values >= 1")
    return values


def _out_dir(s):
    os.makedirs(s["out"], exist_ok=True)
    return s["out"]


def _path(s, name):
    return os.path.join(s["out"], name)


def write_config_echo(s, command):
    echo = {"command": command}
    for key in _RELEVANT[command]:
        echo[key] = s[key]
    with open(_path(s, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(echo, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_matrix(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _load_fit(s):
    if not s["fit"]:
        raise InputError("--fit is required")
    try:
        return FitResult.load(s["fit"])
    except OSError as exc:
        raise InputError(f"cannot read {s['fit']}: {exc.strerror}") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"{s['fit']}: not a fit file ({exc})") from None


def _design_for_fit(s, result):
    n = result.gamma.shape[0]
    if s["n_actors"] and int(s["n_actors"]) != n:
        raise InputError(f"--n-actors {s['n_actors']} does not match the fit ({n} actors)")
    cov = load_design(s, n)
    if tuple(cov.column_names) != tuple(result.column_names):
        raise InputError(
            f"covariate columns {list(cov.column_names)} do not match the fit "
            f"({list(result.column_names)})"
        )
    return cov


# ---------------------------------------------------------------- commands

def cmd_fit(s):
    if s["groups"] is None:
        raise InputError("--groups is required")
    network = load_network(s)
    cov = load_design(s, network.n_actors)
    result = fit(network, cov, config=model_config(s, int(s["groups"])))
    _out_dir(s)
    write_config_echo(s, "fit")
    result.save(_path(s, "fit.json"))
    g = result.n_groups
    tau = result.tau_hat
    _write_matrix(_path(s, "tau.csv"), ["actor"] + [f"group{k + 1}" for k in range(g)],
                  ([i + 1] + [_fmt(v) for v in row] for i, row in enumerate(tau)))
    _write_matrix(_path(s, "theta.csv"), ["group"] + [f"group{k + 1}" for k in range(g)],
                  ([k + 1] + [_fmt(v) for v in row] for k, row in enumerate(result.theta_hat)))
    _write_matrix(_path(s, "beta.csv"), ["group"] + list(result.column_names),
                  ([k + 1] + [_fmt(v) for v in row] for k, row in enumerate(result.beta)))
    _write_matrix(_path(s, "elbo_trace.csv"), ["sweep", "elbo"],
                  ([k + 1, _fmt(v)] for k, v in enumerate(result.elbo_trace)))
    with open(_path(s, "eom.csv"), "w", encoding="utf-8", newline="") as fh:
        write_eom_csv(eom_scores(tau), fh)
    with open(_path(s, "diagnostics.json"), "w", encoding="utf-8") as fh:
        json.dump({"converged": result.converged, "iterations": result.iterations,
                   "elbo": result.elbo, **result.diagnostics}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if not result.converged:
        log.warning("fit did not converge within %d sweeps", result.iterations)
    print(f"elbo {result.elbo!r} after {result.iterations} sweeps "
          f"({'converged' if result.converged else 'not converged'})")
    return 0


def cmd_cv(s):
    if s["groups"] is None:
        raise InputError("--groups is required")
    g_values = parse_group_range(s["groups"])
    k = int(s["folds"])
    network = load_network(s)
    if k < 2:
        raise InputError("--folds must be at least 2")
    cov = load_design(s, network.n_actors)
    folds = make_folds(network, k, s["seed"])
    report = cross_validate(network, cov, g_values, k, model_config(s, g_values[0]),
                            seed=s["seed"], folds=folds, n_jobs=int(s["jobs"]))
    _out_dir(s)
    write_config_echo(s, "cv")
    with open(_path(s, "cv.csv"), "w", encoding="utf-8", newline="") as fh:
        report.write_scores_csv(fh)
    with open(_path(s, "cv_summary.csv"), "w", encoding="utf-8", newline="") as fh:
        report.write_summary_csv(fh)
    with open(_path(s, "folds.csv"), "w", encoding="utf-8", newline="") as fh:
        folds.to_csv(fh)
    chosen = report.chosen_G
    pred = report.predictions[chosen]
    _write_matrix(_path(s, "predictions.csv"), ["fold", "i", "j", "y", "p_hat"],
                  ([int(r[0]), int(r[1]) + 1, int(r[2]) + 1, int(r[3]), _fmt(r[4])]
                   for r in pred))
    auc, points = report.pooled_auc(chosen)
    _write_matrix(_path(s, "roc.csv"), ["fpr", "tpr", "threshold"],
                  ([_fmt(a), _fmt(b), "inf" if np.isinf(c) else _fmt(c)] for a, b, c in points))
    fold_aucs = report.fold_aucs(chosen)
    _write_matrix(_path(s, "auc.csv"), ["scope", "G", "auc"],
                  [["pooled", chosen, _fmt(auc)]]
                  + [[f"fold{f}", chosen, _fmt(v)] for f, v in enumerate(fold_aucs, start=1)])
    print(f"chosen_G {chosen}")
    print(f"pooled_auc {auc!r}")
    return 0


def _spec_from_file(s):
    if not s["spec"]:
        raise InputError("--spec is required")
    with _open_text(s["spec"]) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{s['spec']}: invalid JSON ({exc})") from None
    if not isinstance(spec, dict) or "beta" not in spec:
        raise InputError(f"{s['spec']}: spec needs 'beta' and 'theta' or 'theta_shapes'")
    n = s["n_actors"] or spec.get("n_actors")
    beta = np.atleast_2d(np.asarray(spec["beta"], dtype=float))
    if s["covariates"]:
        cov = load_design(s, int(n) if n else None)
    else:
        if not n:
            raise InputError("give --n-actors (or n_actors in the spec) when there are no covariates")
        cov = CovariateMatrix.intercept_only(int(n))
    theta = spec.get("theta")
    shapes = spec.get("theta_shapes")
    if shapes is not None:
        shapes = (shapes["a"], shapes["b"]) if isinstance(shapes, dict) else tuple(shapes)
    try:
        return GenerativeSpec(cov, beta, theta=theta, theta_shapes=shapes, seed=s["seed"])
    except ValueError as exc:
        raise InputError(f"{s['spec']}: {exc}") from None


def cmd_simulate(s):
    spec = _spec_from_file(s)
    network, latent = sample_network(spec)
    _out_dir(s)
    write_config_echo(s, "simulate")
    with open(_path(s, "network.edges"), "w", encoding="utf-8") as fh:
        write_edge_list(network, fh)
    with open(_path(s, "tau_true.csv"), "w", encoding="utf-8", newline="") as fh:
        latent.write_tau_csv(fh)
    with open(_path(s, "roles.csv"), "w", encoding="utf-8", newline="") as fh:
        latent.write_roles_csv(fh)
    print(f"{network.n_links} links among {network.n_actors} actors")
    return 0


def cmd_bootstrap(s):
    replicates = int(s["replicates"])
    if replicates < 2:
        raise InputError("--replicates must be at least 2 for quantile intervals")
    result = _load_fit(s)
    cov = _design_for_fit(s, result)
    config = result.config
    if s["restarts"] is not None and s["restarts"] != DEFAULTS["restarts"]:
        config = config.replace(n_restarts=int(s["restarts"]))
    samples = bootstrap_beta(result, cov, replicates, config=config, seed=int(s["seed"]),
                             draw_theta=bool(s["draw_theta"]), n_jobs=int(s["jobs"]))
    rows = summarize(samples, result.beta, list(result.column_names))
    _out_dir(s)
    write_config_echo(s, "bootstrap")
    with open(_path(s, "bootstrap_samples.csv"), "w", encoding="utf-8", newline="") as fh:
        write_samples_csv(samples, list(result.column_names), fh)
    with open(_path(s, "bootstrap_summary.csv"), "w", encoding="utf-8", newline="") as fh:
        write_summary_csv(rows, fh)
    try:
        curv = curvature_report(result, cov)
    except NumericalError as exc:
        log.warning("curvature standard errors unavailable: %s", exc)
    else:
        _write_matrix(
            _path(s, "curvature_se.csv"), ["group", "covariate", "approx_se", "damping"],
            ([g + 1, name, _fmt(curv["standard_errors"][g, p]), _fmt(curv["damping"])]
             for g in range(result.n_groups)
             for p, name in enumerate(result.column_names)),
        )
    n_sig = sum(r["significant"] for r in rows)
    print(f"{n_sig} of {len(rows)} coefficients have intervals excluding zero")
    return 0


def cmd_gof(s):
    result = _load_fit(s)
    network = load_network(s)
    if network.n_actors != result.gamma.shape[0]:
        raise InputError("network and fit have different numbers of actors")
    cov = _design_for_fit(s, result)
    report = gof_compare(result, network, cov, int(s["simulations"]), seed=int(s["seed"]),
                         draw_theta=bool(s["draw_theta"]))
    _out_dir(s)
    write_config_echo(s, "gof")
    with open(_path(s, "gof.csv"), "w", encoding="utf-8", newline="") as fh:
        report.write_csv(fh)
    with open(_path(s, "eom.csv"), "w", encoding="utf-8", newline="") as fh:
        write_eom_csv(eom_scores(result.tau_hat), fh)
    with open(_path(s, "separation.csv"), "w", encoding="utf-8", newline="") as fh:
        write_separation_csv(result, network, fh)
    for stat in report.envelopes:
        print(f"{stat}: observed inside the simulated interquartile band at "
              f"{report.band_coverage(stat):.0%} of support points")
    return 0


def cmd_predict(s):
    result = _load_fit(s)
    network = load_network(s, required=False)
    n = result.gamma.shape[0]
    if network is not None and network.n_actors != n:
        raise InputError("network and fit have different numbers of actors")
    p = link_probabilities(result.theta_hat, result.tau_hat)
    _out_dir(s)
    write_config_echo(s, "predict")
    header = ["i", "j", "p_hat"] + (["y"] if network is not None else [])
    rows = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            row = [i + 1, j + 1, _fmt(p[i, j])]
            if network is not None:
                row.append(int(network.adjacency[i, j]))
            rows.append(row)
    _write_matrix(_path(s, "predictions.csv"), header, rows)
    if network is not None and 0 < network.n_links < n * (n - 1):
        off = ~np.eye(n, dtype=bool)
        auc, _ = roc_auc(p[off], network.adjacency[off])
        print(f"in-sample auc {auc!r}")
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "bootstrap": cmd_bootstrap,
    "gof": cmd_gof,
    "predict": cmd_predict,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        settings = resolve(args)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return COMMANDS[args.command](settings)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
