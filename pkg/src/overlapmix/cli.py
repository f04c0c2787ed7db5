"""Command-line entry points.

Every command reads its parameters from three layers: built-in defaults,
then an optional flat ``key = value`` config file (--config), then explicit
flags, later layers winning. Config keys use the flag names with
underscores; unknown keys are rejected. Outputs land in --out (or the
directory named by the OVERLAPMIX_OUTDIR environment variable), worker
counts default to OVERLAPMIX_WORKERS.

Exit codes: 0 success, 1 usage, 2 data validation, 3 numerical failure,
4 non-convergence (artifacts are still written).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import Dataset, PenaltyConfig
from .em import EmConfig, fit_em
from .errors import (
    EXIT_OK,
    ConvergenceError,
    DataValidationError,
    OverlapmixError,
    UsageError,
    exit_code_for,
)
from .evaluate import score_fit
from .io import (
    ResultBundle,
    default_names,
    ingest_csv,
    load_bundle,
    load_sim_instance,
    parse_config_file,
    plaid_to_dict,
    save_bundle,
    save_json,
    save_sim_instance,
    write_matrix_csv,
)
from .pipeline import cross_predict, em_config_dict, run_pipeline
from .plaid import PlaidConfig, plaid_fit_joint, plaid_fit_sequential
from .selection import (
    DEFAULT_GRID_RATIO,
    DEFAULT_GRID_SIZE,
    DEFAULT_RETUNE_EVERY,
    IcConfig,
    fit_em_cv,
    select_K,
)
from .simulate import SimSpec, simulate
from .util import OUTDIR_ENV

# default rel_tol per profile: looser for real data, tight for simulations
PROFILES = {"real": 1e-3, "simulation": 1e-5}


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; our usage exit code is 1."""

    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------- config value types

def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _strs(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


_INGEST_KEYS = {"x": str, "y": str, "out": str,
                "impute_missing": _bool, "min_observed_fraction": float}
_EM_KEYS = {"k": int, "penalty": str, "lambda1": _floats, "lambda2": _floats,
            "coupled": _bool, "restarts": int, "max_iter": int, "rel_tol": float,
            "prune_threshold": float, "seed": int, "profile": str,
            "singleton_only": _bool}

_DEFAULTS = {
    "impute_missing": False, "min_observed_fraction": None,
    "k": 3, "penalty": "lasso", "lambda1": (0.1,), "lambda2": (0.1,),
    "coupled": False, "restarts": 5, "max_iter": 500, "rel_tol": None,
    "prune_threshold": 0.01, "seed": 0, "profile": "simulation",
    "singleton_only": False,
    # simulate
    "n": None, "p": 15, "q": 3, "rho_x": 0.5, "rho_e": 0.75,
    "p1": 0.5, "p2": 0.9, "scenario": "partition", "fractions": None,
    # plaid
    "algorithm": "sequential", "s_rounds": 10, "t_frac": 0.2, "tau": 0.6,
    "backfit": 2,
    # tune
    "folds": 10, "grid_size": DEFAULT_GRID_SIZE, "grid_ratio": DEFAULT_GRID_RATIO,
    "retune_every": DEFAULT_RETUNE_EVERY,
    # select-k
    "candidates": (2, 3, 4), "criterion": "bic", "a_n": None,
    # pipeline / cross-predict
    "damping": 0.9, "workers": None,
    "bundle": None, "instance": None, "cluster": "1", "use": None,
    "x": None, "y": None, "out": None,
}


def _resolve(args, keys: dict) -> dict:
    """Merge defaults, config file, and flags; flags win, config second."""
    doc = {}
    if getattr(args, "config", None):
        doc = parse_config_file(args.config)
        unknown = sorted(set(doc) - set(keys))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    merged = {}
    for key, conv in keys.items():
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
        elif key in doc:
            try:
                merged[key] = conv(doc[key])
            except ValueError as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        else:
            merged[key] = _DEFAULTS[key]
    return merged


def _require(merged: dict, *keys: str) -> None:
    missing = [k for k in keys if merged.get(k) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + k for k in missing)}")


def _out_dir(merged: dict) -> Path:
    out = merged.get("out") or os.environ.get(OUTDIR_ENV)
    if not out:
        raise UsageError(f"no output directory: pass --out or set {OUTDIR_ENV}")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _say(cmd: str, message: str) -> None:
    print(f"{cmd}: {message}")


# ------------------------------------------------------------- data loading

def _load_dataset(cmd: str, merged: dict) -> Dataset:
    impute = bool(merged["impute_missing"])
    xrep = ingest_csv(merged["x"], role="predictors", impute_missing=impute)
    yrep = ingest_csv(merged["y"], role="responses", impute_missing=impute,
                      min_observed_fraction=merged["min_observed_fraction"])
    X = xrep.matrix
    if yrep.dropped_rows:
        keep = np.ones(X.shape[0], dtype=bool)
        drop = [r - 1 for r in yrep.dropped_rows if r - 1 < X.shape[0]]
        keep[drop] = False
        X = X[keep]
        _say(cmd, f"dropped {len(yrep.dropped_rows)} under-observed row(s): "
                  f"{list(yrep.dropped_rows)}")
    if X.shape[0] != yrep.matrix.shape[0]:
        raise DataValidationError(
            f"predictors have {X.shape[0]} rows but responses have {yrep.matrix.shape[0]}")
    for rep, role in ((xrep, "predictors"), (yrep, "responses")):
        if rep.imputed:
            _say(cmd, f"imputed {len(rep.imputed)} missing cell(s) in {role}")
    return Dataset(X=X, Y=yrep.matrix, x_names=xrep.names, y_names=yrep.names)


def _em_config(merged: dict, K: int | None = None) -> EmConfig:
    K = int(merged["k"] if K is None else K)
    kind = merged["penalty"]
    lam1 = merged["lambda1"]
    lam1 = lam1[0] if len(lam1) == 1 else lam1
    if kind == "lasso":
        penalty = PenaltyConfig.lasso(lam1, K=K)
    elif kind == "elastic_net":
        lam2 = merged["lambda2"]
        lam2 = lam2[0] if len(lam2) == 1 else lam2
        penalty = PenaltyConfig.elastic_net(lam1, lam2, K=K)
    elif kind == "none":
        penalty = PenaltyConfig.none()
    else:
        raise UsageError(f"unknown penalty {kind!r} (lasso, elastic_net, none)")
    profile = merged["profile"]
    if profile not in PROFILES:
        raise UsageError(f"unknown profile {profile!r} (real, simulation)")
    rel_tol = merged["rel_tol"] if merged["rel_tol"] is not None else PROFILES[profile]
    return EmConfig(
        K=K, penalty=penalty, rel_tol=rel_tol, max_iter=int(merged["max_iter"]),
        prune_threshold=float(merged["prune_threshold"]),
        n_restarts=int(merged["restarts"]), coupled=bool(merged["coupled"]),
        seed=int(merged["seed"]), singleton_only=bool(merged["singleton_only"]))


def _write_fit_artifacts(cmd: str, out: Path, data: Dataset, fit,
                         config: EmConfig) -> ResultBundle:
    bundle = ResultBundle.from_fit(fit, em_config_dict(config), config.seed,
                                   x_names=data.x_names or default_names("x", data.p),
                                   y_names=data.y_names or default_names("y", data.q))
    save_bundle(bundle, out / "bundle.json")
    write_matrix_csv(out / "responsibilities.csv", fit.resp.z, bundle.pattern_labels)
    write_matrix_csv(out / "hard.csv", fit.hard, default_names("k", config.K))
    for k in range(1, config.K + 1):
        write_matrix_csv(out / f"B{k}.csv", fit.params.B[k - 1], bundle.y_names)
    pi = ", ".join(f"{lab}={v:.4f}" for lab, v in zip(bundle.pattern_labels, bundle.pi)
                   if v > 0)
    status = "converged" if fit.converged else "stopped"
    _say(cmd, f"{status} after {fit.iterations} iterations "
              f"(restart {fit.restart_index + 1}), loglik {fit.loglik_trace[-1]:.6f}")
    _say(cmd, f"mixing weights: {pi}")
    _say(cmd, f"wrote {out / 'bundle.json'}")
    return bundle


def _check_converged(cmd: str, fit, out: Path) -> None:
    if not fit.converged:
        raise ConvergenceError(
            f"{cmd} stopped at the iteration cap before meeting the tolerance; "
            f"artifacts were still written to {out}")


# ------------------------------------------------------------------ simulate

def cmd_simulate(args) -> int:
    keys = {"n": int, "p": int, "q": int, "k": int, "rho_x": float,
            "rho_e": float, "p1": float, "p2": float, "scenario": str,
            "fractions": _floats, "seed": int, "out": str}
    merged = _resolve(args, keys)
    _require(merged, "n")
    out = _out_dir(merged)
    spec_kwargs = dict(n=merged["n"], p=merged["p"], q=merged["q"], K=merged["k"],
                       rho_x=merged["rho_x"], rho_e=merged["rho_e"],
                       p1=merged["p1"], p2=merged["p2"],
                       scenario=merged["scenario"], seed=merged["seed"])
    if merged["fractions"] is not None:
        spec_kwargs["fractions"] = merged["fractions"]
    inst = simulate(SimSpec(**spec_kwargs))
    paths = save_sim_instance(inst, out)
    labels, counts = np.unique([p.label for p in inst.true_pattern], return_counts=True)
    _say("simulate", f"n={inst.data.n} p={inst.data.p} q={inst.data.q} "
                     f"K={inst.spec.K} scenario={inst.spec.scenario}")
    _say("simulate", "rows per pattern: " +
         ", ".join(f"{l}={c}" for l, c in zip(labels, counts)))
    _say("simulate", f"wrote {paths['X']}, {paths['Y']}, {paths['instance']}")
    return EXIT_OK


# ----------------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    merged = _resolve(args, {**_INGEST_KEYS, **_EM_KEYS})
    _require(merged, "x", "y")
    out = _out_dir(merged)
    data = _load_dataset("fit", merged)
    config = _em_config(merged)
    fit = fit_em(data, config)
    _write_fit_artifacts("fit", out, data, fit, config)
    _check_converged("fit", fit, out)
    return EXIT_OK


# --------------------------------------------------------------------- plaid

def cmd_plaid(args) -> int:
    keys = {**_INGEST_KEYS, "k": int, "algorithm": str, "s_rounds": int,
            "t_frac": float, "tau": float, "backfit": int,
            "lambda1": _floats, "seed": int}
    merged = _resolve(args, keys)
    _require(merged, "x", "y")
    out = _out_dir(merged)
    data = _load_dataset("plaid", merged)
    lam1 = merged["lambda1"]
    config = PlaidConfig(K=merged["k"], S=merged["s_rounds"],
                         T_frac=merged["t_frac"], tau=merged["tau"],
                         R=merged["backfit"],
                         lambda1=lam1[0] if len(lam1) == 1 else lam1,
                         seed=merged["seed"])
    if merged["algorithm"] == "sequential":
        fit = plaid_fit_sequential(data, config)
    elif merged["algorithm"] == "joint":
        fit = plaid_fit_joint(data, config)
    else:
        raise UsageError(f"unknown algorithm {merged['algorithm']!r} (sequential, joint)")
    echo = {"K": config.K, "S": config.S, "T_frac": config.T_frac,
            "tau": config.tau, "R": config.R, "lambda1": list(config.lambda1),
            "algorithm": merged["algorithm"], "seed": config.seed}
    save_json(plaid_to_dict(fit, echo, config.seed), out / "plaid.json")
    for i, layer in enumerate(fit.layers, start=1):
        _say("plaid", f"layer {i}: {int(layer.members.sum())} member row(s), "
                      f"max|B| {np.max(np.abs(layer.B)):.4f}")
    _say("plaid", f"{len(fit.layers)} layer(s), residual SSE {fit.residual_sse:.6f}, "
                  f"objective {fit.Q_value:.6f}")
    _say("plaid", f"wrote {out / 'plaid.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------- tune

def cmd_tune(args) -> int:
    keys = {**_INGEST_KEYS, **_EM_KEYS, "folds": int, "grid_size": int,
            "grid_ratio": float, "retune_every": int}
    merged = _resolve(args, keys)
    _require(merged, "x", "y")
    out = _out_dir(merged)
    data = _load_dataset("tune", merged)
    config = _em_config(merged)
    result = fit_em_cv(data, config, n_folds=merged["folds"],
                       grid_size=merged["grid_size"],
                       grid_ratio=merged["grid_ratio"],
                       retune_every=merged["retune_every"])
    tuned = replace(config, penalty=result.penalty)
    _write_fit_artifacts("tune", out, data, result.fit, tuned)
    save_json({
        "schema": "overlapmix-cv-v1",
        "version": __version__,
        "lambda1": list(result.penalty.lambda1),
        "curves": {str(k): {
            "lambdas": list(c.lambdas),
            "mean_errors": list(c.mean_errors),
            "selected_lambda": c.selected_lambda,
            "selected_index": c.selected_index,
            "n_folds": c.n_folds,
        } for k, c in result.curves.items()},
    }, out / "cv_curves.json")
    lams = ", ".join(f"{k}={v:.6g}" for k, v in
                     enumerate(result.penalty.lambda1, start=1))
    _say("tune", f"selected lambda1 per cluster: {lams}")
    _say("tune", f"wrote {out / 'cv_curves.json'}")
    _check_converged("tune", result.fit, out)
    return EXIT_OK


# ------------------------------------------------------------------ select-k

def cmd_select_k(args) -> int:
    keys = {**_INGEST_KEYS,
            **{k: v for k, v in _EM_KEYS.items() if k != "k"},
            "candidates": _ints, "criterion": str, "a_n": float}
    merged = _resolve(args, keys)
    _require(merged, "x", "y")
    out = _out_dir(merged)
    data = _load_dataset("select-k", merged)
    candidates = merged["candidates"]
    template = _em_config(merged, K=max(candidates))
    ic = IcConfig(K_candidates=candidates, a_n_kind=merged["criterion"],
                  a_n_value=merged["a_n"])
    report = select_K(data, template, ic)
    save_json({
        "schema": "overlapmix-selectk-v1",
        "version": __version__,
        "criterion": merged["criterion"],
        "chosen_K": report.chosen_K,
        "table": [{"K": r.K, "loglik": r.loglik, "n_params": r.n_params,
                   "a_n": r.a_n, "ic": r.ic, "converged": r.converged,
                   "error": r.error} for r in report.table],
    }, out / "selection.json")
    best = report.fits[report.chosen_K]
    config = replace(template, K=report.chosen_K)
    _write_fit_artifacts("select-k", out, data, best, config)
    for r in report.table:
        if r.error is not None:
            _say("select-k", f"K={r.K}: failed ({r.error})")
        else:
            _say("select-k", f"K={r.K}: ic {r.ic:.4f}, loglik {r.loglik:.4f}, "
                             f"{r.n_params} parameters")
    _say("select-k", f"chosen K = {report.chosen_K} ({merged['criterion']})")
    _say("select-k", f"wrote {out / 'selection.json'}")
    return EXIT_OK


# ------------------------------------------------------------------ evaluate

def cmd_evaluate(args) -> int:
    keys = {"bundle": str, "instance": str, "out": str}
    merged = _resolve(args, keys)
    _require(merged, "bundle", "instance")
    bundle = load_bundle(merged["bundle"])
    inst = load_sim_instance(merged["instance"])
    if inst.data.n != bundle.hard.shape[0]:
        raise DataValidationError(
            f"instance has {inst.data.n} rows, bundle fitted {bundle.hard.shape[0]}")
    same_shape = (len(bundle.B) > 0 and len(inst.true_B) > 0
                  and bundle.B[0].shape == inst.true_B[0].shape)
    report = score_fit(inst.true_P, bundle.hard,
                       true_B=inst.true_B if same_shape else None,
                       est_B=bundle.B if same_shape else None)
    _say("evaluate", f"mean F1 {report.mean_f1:.4f}, specificity "
                     f"{report.mean_specificity:.4f}, sensitivity "
                     f"{report.mean_sensitivity:.4f}")
    if report.coefficient_sse is not None:
        _say("evaluate", f"coefficient SSE {report.coefficient_sse:.6f}")
    pairing = ", ".join(
        f"{r + 1}->{'-' if t is None else t + 1}"
        for r, t in sorted(report.pairing.items()))
    _say("evaluate", f"cluster pairing (retrieved->target): {pairing}")
    if merged["out"]:
        out = _out_dir(merged)
        save_json({
            "schema": "overlapmix-metrics-v1",
            "version": __version__,
            "mean_f1": report.mean_f1,
            "mean_specificity": report.mean_specificity,
            "mean_sensitivity": report.mean_sensitivity,
            "coefficient_sse": report.coefficient_sse,
            "pairing": {str(r): t for r, t in report.pairing.items()},
            "per_pair": [{"retrieved": p.retrieved, "target": p.target,
                          "specificity": p.specificity,
                          "sensitivity": p.sensitivity, "f1": p.f1}
                         for p in report.per_pair],
        }, out / "metrics.json")
        _say("evaluate", f"wrote {out / 'metrics.json'}")
    return EXIT_OK


# ------------------------------------------------------------------ pipeline

def cmd_pipeline(args) -> int:
    keys = {**_INGEST_KEYS, **_EM_KEYS, "damping": float, "workers": int}
    merged = _resolve(args, keys)
    _require(merged, "x", "y")
    out = _out_dir(merged)
    data = _load_dataset("pipeline", merged)
    config = _em_config(merged)
    result = run_pipeline(data, config, out, damping=merged["damping"],
                          workers=merged["workers"])
    for g, names in enumerate(result.groups.level2_names(), start=1):
        _say("pipeline", f"group {g}: {', '.join(names)}")
    _say("pipeline", f"{data.q} response(s) -> {len(result.groups.level1)} "
                     f"level-1 group(s) -> {len(result.groups.level2)} "
                     f"level-2 group(s)")
    _say("pipeline", f"wrote {out / 'groups.json'} plus step1/ and step3/ bundles")
    laggards = [b for b in (*result.step1, *result.step3) if not b.converged]
    if laggards:
        raise ConvergenceError(
            f"{len(laggards)} pipeline fit(s) stopped at the iteration cap; "
            f"artifacts were still written to {out}")
    return EXIT_OK


# -------------------------------------------------------------- cross-predict

def _parse_coeff_refs(refs, main_bundle: ResultBundle):
    choices = []
    for ref in refs:
        if ref == "zero":
            choices.append(np.zeros_like(main_bundle.B[0]))
            continue
        path, sep, idx = ref.rpartition(":")
        if not sep or not idx.isdigit():
            raise UsageError(
                f"coefficient reference {ref!r} is not BUNDLE.json:K or 'zero'")
        choices.append((load_bundle(path), int(idx)))
    return choices


def cmd_cross_predict(args) -> int:
    keys = {"bundle": str, "cluster": str, "use": _strs, "x": str, "y": str,
            "out": str, "impute_missing": _bool, "min_observed_fraction": float}
    merged = _resolve(args, keys)
    _require(merged, "bundle", "x", "use")
    out = _out_dir(merged)
    bundle = load_bundle(merged["bundle"])
    impute = bool(merged["impute_missing"])
    xrep = ingest_csv(merged["x"], role="predictors", impute_missing=impute)
    choices = _parse_coeff_refs(merged["use"], bundle)
    if merged["y"]:
        yrep = ingest_csv(merged["y"], role="responses", impute_missing=impute,
                          min_observed_fraction=merged["min_observed_fraction"])
        data = Dataset(X=xrep.matrix, Y=yrep.matrix,
                       x_names=xrep.names, y_names=yrep.names)
    else:
        # prediction only needs X; fabricate an empty response block
        q = bundle.B[0].shape[1]
        names = bundle.y_names or default_names("y", q)
        data = Dataset(X=xrep.matrix, Y=np.zeros((xrep.matrix.shape[0], q)),
                       x_names=xrep.names, y_names=names)
    cluster_text = merged["cluster"]
    cluster = int(cluster_text) if cluster_text.isdigit() else cluster_text
    cp = cross_predict(bundle, cluster, choices, data)
    rows = np.array(cp.rows, dtype=float)[:, None] + 1.0
    write_matrix_csv(out / "predictions.csv",
                     np.hstack([rows, cp.predictions]),
                     ("row", *cp.response_names))
    save_json({
        "schema": "overlapmix-crosspredict-v1",
        "version": __version__,
        "cluster": cluster_text,
        "coefficients": list(merged["use"]),
        "rows": list(cp.rows),
        "quartiles": {name: qs for name, qs in zip(cp.response_names, cp.quartiles)},
    }, out / "quartiles.json")
    _say("cross-predict", f"cluster {cluster_text!r}: {len(cp.rows)} row(s)")
    for name, qs in zip(cp.response_names, cp.quartiles):
        _say("cross-predict",
             f"{name}: min {qs['min']:.4f}, q25 {qs['q25']:.4f}, median "
             f"{qs['median']:.4f}, q75 {qs['q75']:.4f}, max {qs['max']:.4f}")
    _say("cross-predict", f"wrote {out / 'predictions.csv'} and {out / 'quartiles.json'}")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _add_common(p) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--out", help=f"output directory (default: ${OUTDIR_ENV})")


def _add_ingest(p, need_y: bool = True) -> None:
    p.add_argument("--x", help="predictor CSV (header row, numeric cells)")
    if need_y:
        p.add_argument("--y", help="response CSV, one column per response")
    p.add_argument("--impute-missing", action="store_const", const=True,
                   help="replace missing cells by column means")
    p.add_argument("--min-observed-fraction", type=float,
                   help="drop rows whose observed response fraction is lower")


def _add_em(p, with_k: bool = True) -> None:
    if with_k:
        p.add_argument("--k", type=int, help="number of overlapping clusters")
    p.add_argument("--penalty", choices=("lasso", "elastic_net", "none"))
    p.add_argument("--lambda1", type=_floats,
                   help="l1 weight, scalar or one value per cluster")
    p.add_argument("--lambda2", type=_floats,
                   help="ridge weight for elastic_net")
    p.add_argument("--coupled", action="store_const", const=True,
                   help="solve the covariance-coupled M-step")
    p.add_argument("--restarts", type=int, help="random EM restarts")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--rel-tol", type=float,
                   help="relative log-likelihood stopping tolerance")
    p.add_argument("--prune-threshold", type=float,
                   help="drop patterns whose weight falls below this")
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=tuple(PROFILES),
                   help="default rel_tol: real=1e-3, simulation=1e-5")
    p.add_argument("--singleton-only", action="store_const", const=True,
                   help="restrict patterns to single-cluster memberships")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="overlapmix",
                     description="Overlapping-cluster mixtures of sparse "
                                 "multivariate regressions.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a synthetic instance to CSV")
    _add_common(p)
    p.add_argument("--n", type=int, help="observations (required)")
    p.add_argument("--p", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--rho-x", type=float)
    p.add_argument("--rho-e", type=float)
    p.add_argument("--p1", type=float)
    p.add_argument("--p2", type=float)
    p.add_argument("--scenario", choices=("partition", "overlap"))
    p.add_argument("--fractions", type=_floats,
                   help="overlap mass per membership cardinality")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the mixture by penalized EM")
    _add_common(p)
    _add_ingest(p)
    _add_em(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("plaid", help="fit additive plaid layers")
    _add_common(p)
    _add_ingest(p)
    p.add_argument("--k", type=int, help="maximum layers")
    p.add_argument("--algorithm", choices=("sequential", "joint"))
    p.add_argument("--s-rounds", type=int, help="membership relaxation rounds")
    p.add_argument("--t-frac", type=float)
    p.add_argument("--tau", type=float, help="residual fraction to keep a row")
    p.add_argument("--backfit", type=int, help="backfit passes per layer")
    p.add_argument("--lambda1", type=_floats)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_plaid)

    p = sub.add_parser("tune", help="fit with per-cluster lambda chosen by CV")
    _add_common(p)
    _add_ingest(p)
    _add_em(p)
    p.add_argument("--folds", type=int)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--grid-ratio", type=float)
    p.add_argument("--retune-every", type=int)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("select-k", help="choose the cluster count by IC")
    _add_common(p)
    _add_ingest(p)
    _add_em(p, with_k=False)
    p.add_argument("--candidates", type=_ints, help="e.g. 2,3,4")
    p.add_argument("--criterion", choices=("aic", "bic", "custom"))
    p.add_argument("--a-n", type=float, help="penalty weight for custom")
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("evaluate", help="score a fit against its instance")
    _add_common(p)
    p.add_argument("--bundle", help="bundle.json from fit/tune/select-k")
    p.add_argument("--instance", help="directory written by simulate")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="per-response fits, grouping, group fits")
    _add_common(p)
    _add_ingest(p)
    _add_em(p)
    p.add_argument("--damping", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("cross-predict",
                       help="predict one cluster's rows with chosen coefficients")
    _add_common(p)
    p.add_argument("--bundle", help="bundle defining clusters and rows")
    p.add_argument("--cluster", help="1-based cluster index or pattern label")
    p.add_argument("--use", action="append",
                   help="BUNDLE.json:K or 'zero'; repeat to sum several")
    p.add_argument("--x", help="predictor CSV")
    p.add_argument("--y", help="optional response CSV for column names")
    p.add_argument("--impute-missing", action="store_const", const=True)
    p.add_argument("--min-observed-fraction", type=float)
    p.set_defaults(func=cmd_cross_predict)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except OverlapmixError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error[OSError]: {exc}", file=sys.stderr)
        return exit_code_for(DataValidationError(str(exc)))


if __name__ == "__main__":
    sys.exit(main())
