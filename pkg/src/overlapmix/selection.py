"""Tuning-parameter and model-order selection.

Per-cluster lambda is tuned by component-wise K-fold cross-validation on the
cluster's stacked weighted regression; the number of clusters is chosen by an
information criterion IC(K) = -2 loglik + N_K a_n with a_n = 2 (AIC),
log n (BIC), or a custom value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Dataset, ModelParams, PenaltyConfig, Responsibilities, log_likelihood
from .em import (
    EmConfig,
    FitResult,
    count_effective_params,
    fit_em,
)
from .errors import ConvergenceError, DataValidationError, OverlapmixError
from .solvers import (
    StackedProblem,
    lambda_max,
    solve_coupled_lasso,
    solve_separate_lasso,
)

DEFAULT_GRID_SIZE = 20
DEFAULT_GRID_RATIO = 1e-3
DEFAULT_RETUNE_EVERY = 5


@dataclass(frozen=True)
class LambdaGrid:
    """Strictly decreasing positive candidate penalties; folds for CV."""

    values: tuple[float, ...]
    n_folds: int = 10

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise DataValidationError("grid must be nonempty")
        if any(v <= 0 for v in vals):
            raise DataValidationError("grid values must be positive")
        if any(a <= b for a, b in zip(vals, vals[1:])):
            raise DataValidationError("grid values must be strictly decreasing")
        if self.n_folds < 2:
            raise DataValidationError("need at least 2 folds")
        object.__setattr__(self, "values", vals)

    @classmethod
    def default(cls, lam_max: float, size: int = DEFAULT_GRID_SIZE,
                ratio: float = DEFAULT_GRID_RATIO, n_folds: int = 10) -> "LambdaGrid":
        """size log-spaced values from lam_max down to ratio * lam_max."""
        if lam_max <= 0:
            raise DataValidationError("lam_max must be positive")
        if not 0 < ratio < 1:
            raise DataValidationError("ratio must lie in (0, 1)")
        vals = np.exp(np.linspace(math.log(lam_max), math.log(ratio * lam_max), size))
        return cls(values=tuple(float(v) for v in vals), n_folds=n_folds)


@dataclass(frozen=True)
class CvCurve:
    lambdas: tuple[float, ...]
    mean_errors: tuple[float, ...]
    selected_lambda: float
    selected_index: int
    n_folds: int

    def __post_init__(self):
        if len(self.lambdas) != len(self.mean_errors):
            raise DataValidationError("curve lengths disagree")
        if not 0 <= self.selected_index < len(self.lambdas):
            raise DataValidationError("selected_index out of range")


@dataclass(frozen=True)
class IcConfig:
    K_candidates: tuple[int, ...]
    a_n_kind: str = "bic"
    a_n_value: float | None = None

    def __post_init__(self):
        cands = tuple(int(k) for k in self.K_candidates)
        if not cands or any(k < 1 for k in cands):
            raise DataValidationError("K_candidates must be nonempty positive integers")
        if self.a_n_kind not in ("aic", "bic", "custom"):
            raise DataValidationError(f"unknown a_n kind {self.a_n_kind!r}")
        if self.a_n_kind == "custom" and self.a_n_value is None:
            raise DataValidationError("custom a_n needs a value")
        object.__setattr__(self, "K_candidates", cands)

    def a_n(self, n: int) -> float:
        if self.a_n_kind == "aic":
            return 2.0
        if self.a_n_kind == "bic":
            return math.log(n)
        return float(self.a_n_value)


@dataclass(frozen=True)
class IcRow:
    K: int
    loglik: float | None
    n_params: int | None
    a_n: float | None
    ic: float | None
    converged: bool | None
    error: str | None = None


@dataclass(frozen=True)
class SelectionReport:
    chosen_K: int
    table: tuple[IcRow, ...]
    fits: dict[int, FitResult] = field(default_factory=dict, repr=False)


def stratified_folds(pattern_ids: np.ndarray, weights: np.ndarray, n_folds: int) -> np.ndarray:
    """Fold index per stacked row: weighted round-robin within each pattern.

    Rows of each pattern are sorted by weight descending (stable) and dealt
    cyclically, so every fold sees every pattern and carries similar weight.
    """
    pattern_ids = np.asarray(pattern_ids)
    weights = np.asarray(weights, dtype=float)
    folds = np.empty(len(weights), dtype=int)
    for pat in np.unique(pattern_ids):
        rows = np.flatnonzero(pattern_ids == pat)
        order = rows[np.argsort(-weights[rows], kind="stable")]
        folds[order] = np.arange(len(order)) % n_folds
    return folds


def _stack_for_cluster(k, resp, params, data):
    patterns = params.patterns
    idxs = patterns.containing(k)
    blocks, wts, pids = [], [], []
    for i in idxs:
        other = np.zeros_like(params.B[0])
        for l in patterns[i]:
            if l != k:
                other = other + params.B[l - 1]
        blocks.append(data.Y - data.X @ other)
        wts.append(resp.z[:, i])
        pids.append(np.full(data.n, i))
    Xstack = np.vstack([data.X] * len(idxs))
    return Xstack, np.vstack(blocks), np.concatenate(wts), np.concatenate(pids), idxs


def cv_select_lambda(k: int, resp: Responsibilities, pi: np.ndarray, params: ModelParams,
                     data: Dataset, grid: LambdaGrid, coupled: bool = False,
                     lambda2: float = 0.0,
                     unpenalized_cols: frozenset[int] = frozenset()) -> tuple[float, CvCurve]:
    """Pick lambda_k by K-fold CV on cluster k's stacked weighted regression.

    Candidate fits use the same effective penalty the M-step would apply
    (lambda scaled by the cluster's mixing mass). Score is the weighted
    squared prediction error on held-out rows; ties go to the larger lambda.
    """
    X, Ystar, w, pids, idxs = _stack_for_cluster(k, resp, params, data)
    mass = float(sum(pi[i] for i in idxs))
    positive = w > 0
    if int(positive.sum()) < grid.n_folds:
        raise DataValidationError(
            f"cluster {k} has {int(positive.sum())} weighted rows, fewer than "
            f"{grid.n_folds} folds"
        )
    folds = stratified_folds(pids, w, grid.n_folds)
    SigmaInv = None
    if coupled:
        from .em import _sigma_inverse
        SigmaInv = _sigma_inverse(params.Sigma)
    solver = solve_coupled_lasso if coupled else solve_separate_lasso
    fold_errors = np.zeros((len(grid.values), grid.n_folds))
    for f in range(grid.n_folds):
        train = folds != f
        hold = ~train
        if not np.any(w[train] > 0):
            raise DataValidationError(f"fold {f} has no training weight")
        B_warm = np.asarray(params.B[k - 1])
        for li, lam in enumerate(grid.values):
            problem = StackedProblem(
                X=X[train], Ystar=Ystar[train], w=w[train],
                lambda1=lam * mass, lambda2=lambda2 * mass,
                SigmaInv=SigmaInv, unpenalized_cols=unpenalized_cols,
            )
            report = solver(problem, B0=B_warm)
            B_warm = report.B
            resid = Ystar[hold] - X[hold] @ report.B
            fold_errors[li, f] = float(np.sum(w[hold][:, None] * resid ** 2))
    mean_errors = fold_errors.mean(axis=1)
    sel = int(np.argmin(mean_errors))  # first minimum = largest lambda on ties
    curve = CvCurve(
        lambdas=grid.values,
        mean_errors=tuple(float(v) for v in mean_errors),
        selected_lambda=grid.values[sel],
        selected_index=sel,
        n_folds=grid.n_folds,
    )
    return grid.values[sel], curve


def default_grid_for_cluster(k, resp, params, data, n_folds: int = 10,
                             size: int = DEFAULT_GRID_SIZE,
                             ratio: float = DEFAULT_GRID_RATIO,
                             unpenalized_cols: frozenset[int] = frozenset()) -> LambdaGrid:
    """Grid anchored at the stacked problem's smallest all-zero lambda."""
    X, Ystar, w, _, idxs = _stack_for_cluster(k, resp, params, data)
    probe = StackedProblem(X=X, Ystar=Ystar, w=w, unpenalized_cols=unpenalized_cols)
    lmax = lambda_max(probe)
    if lmax <= 0:
        lmax = 1.0
    return LambdaGrid.default(lmax, size=size, ratio=ratio, n_folds=n_folds)


def _penalty_for_K(penalty: PenaltyConfig, K: int) -> PenaltyConfig:
    """Resize per-cluster tuning tuples to a candidate K.

    Extra entries are dropped, missing ones repeat the last value, so a
    scalar-broadcast penalty behaves identically at every candidate.
    """
    if penalty.kind == "none" or not penalty.lambda1 or len(penalty.lambda1) == K:
        return penalty

    def resize(vals):
        vals = tuple(vals)
        return vals[:K] if len(vals) >= K else vals + (vals[-1],) * (K - len(vals))

    return PenaltyConfig(kind=penalty.kind, lambda1=resize(penalty.lambda1),
                         lambda2=resize(penalty.lambda2) if penalty.lambda2 else (),
                         unpenalized_cols=penalty.unpenalized_cols)


def select_K(data: Dataset, em_config_template: EmConfig, ic: IcConfig) -> SelectionReport:
    """Fit each candidate K and pick the information-criterion minimizer.

    The template's penalty is resized to each candidate (see _penalty_for_K).
    Ties break toward the smaller K. Failed candidates stay in the table with
    their error message; if every candidate fails a convergence error carries
    the combined diagnostics.
    """
    rows = []
    fits = {}
    a_n = ic.a_n(data.n)
    for K in sorted(set(ic.K_candidates)):
        cfg = replace(em_config_template, K=K,
                      penalty=_penalty_for_K(em_config_template.penalty, K))
        try:
            res = fit_em(data, cfg)
        except OverlapmixError as exc:
            rows.append(IcRow(K=K, loglik=None, n_params=None, a_n=None,
                              ic=None, converged=None, error=str(exc)))
            continue
        ll = log_likelihood(res.params, data)
        n_par = count_effective_params(res.params)
        rows.append(IcRow(K=K, loglik=float(ll), n_params=n_par, a_n=a_n,
                          ic=float(-2.0 * ll + n_par * a_n), converged=res.converged))
        fits[K] = res
    ok = [r for r in rows if r.error is None]
    if not ok:
        details = "; ".join(f"K={r.K}: {r.error}" for r in rows)
        raise ConvergenceError(f"every candidate K failed: {details}")
    best = min(ok, key=lambda r: (r.ic, r.K))
    return SelectionReport(chosen_K=best.K, table=tuple(rows), fits=fits)


@dataclass(frozen=True)
class CvFitResult:
    fit: FitResult
    penalty: PenaltyConfig
    curves: dict[int, CvCurve]


def fit_em_cv(data: Dataset, config: EmConfig, n_folds: int = 10,
              grid_size: int = DEFAULT_GRID_SIZE, grid_ratio: float = DEFAULT_GRID_RATIO,
              retune_every: int = DEFAULT_RETUNE_EVERY) -> CvFitResult:
    """EM with lambdas re-tuned by CV at iteration 1 and every `retune_every` after.

    Composes the public EM operations; the schedule exists because running a
    full CV sweep each iteration costs more than the EM itself.
    """
    from .em import _run_once, initial_params

    if config.penalty.kind == "none":
        raise DataValidationError("fit_em_cv needs a lasso or elastic_net penalty")
    state: dict = {"penalty": config.penalty, "curves": {}}

    def schedule(it, resp, pi_new, params):
        if it == 1 or (it - 1) % retune_every == 0:
            lam1 = []
            curves = {}
            for k in range(1, config.K + 1):
                try:
                    grid = default_grid_for_cluster(
                        k, resp, params, data, n_folds=n_folds, size=grid_size,
                        ratio=grid_ratio,
                        unpenalized_cols=config.penalty.unpenalized_cols)
                    lam2 = config.penalty.lam2(k)
                    lam, curve = cv_select_lambda(
                        k, resp, pi_new, params, data, grid, coupled=config.coupled,
                        lambda2=lam2,
                        unpenalized_cols=config.penalty.unpenalized_cols)
                except DataValidationError:
                    lam = state["penalty"].lam1(k)
                    curve = None
                lam1.append(lam)
                if curve is not None:
                    curves[k] = curve
            if config.penalty.kind == "elastic_net":
                pen = PenaltyConfig.elastic_net(
                    tuple(lam1), config.penalty.lambda2, K=config.K,
                    unpenalized_cols=config.penalty.unpenalized_cols)
            else:
                pen = PenaltyConfig.lasso(
                    tuple(lam1), K=config.K,
                    unpenalized_cols=config.penalty.unpenalized_cols)
            state["penalty"] = pen
            state["curves"] = curves
        return state["penalty"]

    best = None
    for r in range(config.n_restarts):
        state["penalty"] = config.penalty
        state["curves"] = {}
        start = initial_params(data, config, restart=r)
        outcome = _run_once(data, config, start, penalty_schedule=schedule)
        if best is None or outcome[1] > best[1][1]:
            best = (r, outcome, state["penalty"], dict(state["curves"]))
    r_best, (params, pen_ll, trace, pruned_all, converged, iterations), penalty, curves = best
    from .em import e_step, hard_assignments

    resp = e_step(params, data)
    fit = FitResult(
        params=params, resp=resp, hard=hard_assignments(resp),
        loglik_trace=tuple(trace), penalized_loglik=float(pen_ll),
        n_effective_params=count_effective_params(params),
        pruned_patterns=tuple(pruned_all), converged=converged,
        iterations=iterations, restart_index=r_best,
    )
    return CvFitResult(fit=fit, penalty=penalty, curves=curves)
