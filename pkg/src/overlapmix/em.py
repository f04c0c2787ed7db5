"""Penalized EM for the overlapping-cluster mixture.

Iteration: E-step posteriors over patterns, then mixing weights as column
means, then one penalized weighted regression per cluster (warm-started, so
each B_k update weakly improves its own M-step objective), then the
closed-form covariance, then pruning of low-weight patterns.

The pi update maximizes only the leading term of the penalized objective, so
global monotonicity is not guaranteed; the engine records the trace and keeps
the best penalized log-likelihood seen within each run.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh

from .core import (
    Dataset,
    ModelParams,
    PenaltyConfig,
    Responsibilities,
    log_likelihood,
    pattern_log_joint,
    penalized_log_likelihood,
)
from .errors import (
    ConvergenceError,
    DataValidationError,
    EmptyComponentError,
    NumericalError,
)
from .patterns import OverlapPattern, enumerate_patterns
from .solvers import StackedProblem, solve_coupled_lasso, solve_separate_lasso
from .util import frozen, rng_stream

WEIGHT_FLOOR = 1e-12
NONZERO_TOL = 1e-12


@dataclass(frozen=True)
class EmConfig:
    """Engine settings; defaults match the simulation-study profile."""

    K: int
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig.none)
    rel_tol: float = 1e-5
    max_iter: int = 500
    prune_threshold: float = 0.01
    n_restarts: int = 5
    coupled: bool = False
    seed: int = 0
    sigma_jitter: float = 1e-8
    singleton_only: bool = False

    def __post_init__(self):
        enumerate_patterns(self.K)  # validates K
        if self.rel_tol <= 0:
            raise DataValidationError("rel_tol must be > 0")
        if self.max_iter < 1 or self.n_restarts < 1:
            raise DataValidationError("max_iter and n_restarts must be >= 1")
        if not 0 <= self.prune_threshold < 1:
            raise DataValidationError("prune_threshold must lie in [0, 1)")
        if self.sigma_jitter < 0:
            raise DataValidationError("sigma_jitter must be >= 0")
        if self.coupled and self.penalty.kind == "elastic_net":
            raise DataValidationError("elastic_net penalty requires the separate solver")


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    resp: Responsibilities
    hard: np.ndarray
    loglik_trace: tuple[float, ...]
    penalized_loglik: float
    n_effective_params: int
    pruned_patterns: tuple[OverlapPattern, ...]
    converged: bool
    iterations: int
    restart_index: int = 0

    def __post_init__(self):
        hard = np.asarray(self.hard, dtype=int)
        K = self.params.K
        if hard.shape != (self.resp.n, K):
            raise DataValidationError(f"hard shape {hard.shape} does not match (n, K)")
        want = hard_assignments(self.resp)
        if not np.array_equal(hard, want):
            raise DataValidationError("hard memberships disagree with argmax patterns")
        if not all(np.isfinite(v) for v in self.loglik_trace):
            raise DataValidationError("loglik_trace contains non-finite values")
        object.__setattr__(self, "hard", frozen(hard.astype(int), dtype=int))
        object.__setattr__(self, "loglik_trace", tuple(float(v) for v in self.loglik_trace))


def e_step(params: ModelParams, data: Dataset) -> Responsibilities:
    """Posterior pattern memberships via Bayes' rule, log-space normalized.

    Patterns with pi == 0 get responsibility exactly 0.
    """
    patterns = params.patterns
    active, logjoint = pattern_log_joint(params, data)
    if logjoint.shape[1] == 0:
        raise NumericalError("no pattern has positive mixing weight")
    m = np.max(logjoint, axis=1, keepdims=True)
    raw = np.exp(logjoint - m)
    raw /= raw.sum(axis=1, keepdims=True)
    z = np.zeros((data.n, len(patterns)))
    z[:, active] = raw
    return Responsibilities(z=z, patterns=patterns)


def update_pi(resp: Responsibilities) -> np.ndarray:
    """Mixing weights: column means of the responsibility matrix."""
    return resp.z.mean(axis=0)


def _sigma_inverse(Sigma: np.ndarray) -> np.ndarray:
    try:
        cf = cho_factor(Sigma, lower=True)
    except Exception as exc:
        raise NumericalError(f"covariance factorization failed: {exc}") from exc
    inv = cho_solve(cf, np.eye(Sigma.shape[0]))
    return (inv + inv.T) / 2.0


def update_B_k(k: int, resp: Responsibilities, pi: np.ndarray, params: ModelParams,
               data: Dataset, penalty: PenaltyConfig, coupled: bool = False) -> np.ndarray:
    """Solve the stacked penalized regression for cluster k, others fixed.

    Rows of the stacked problem are (observation, pattern) pairs over the
    patterns containing k; each pattern contributes offset-adjusted responses
    y* = y - sum_{l in pattern, l != k} B_l^T x and weights from resp. The
    effective penalty is lambda_k times the mixing mass of those patterns.
    Warm-started at the current B_k, so the M-step objective cannot rise.
    """
    patterns = params.patterns
    if not 1 <= k <= params.K:
        raise DataValidationError(f"k={k} outside 1..{params.K}")
    idxs = patterns.containing(k)
    weights = np.concatenate([resp.z[:, i] for i in idxs])
    if float(weights.sum()) < WEIGHT_FLOOR:
        raise EmptyComponentError(f"cluster {k} has total weight below {WEIGHT_FLOOR}")
    mass = float(sum(pi[i] for i in idxs))
    blocks = []
    for i in idxs:
        other = np.zeros_like(params.B[0])
        for l in patterns[i]:
            if l != k:
                other = other + params.B[l - 1]
        blocks.append(data.Y - data.X @ other)
    Ystar = np.vstack(blocks)
    Xstack = np.vstack([data.X] * len(idxs))
    lam1 = penalty.lam1(k) * mass
    lam2 = penalty.lam2(k) * mass
    SigmaInv = _sigma_inverse(params.Sigma) if coupled else None
    problem = StackedProblem(X=Xstack, Ystar=Ystar, w=weights, lambda1=lam1,
                             lambda2=lam2, SigmaInv=SigmaInv,
                             unpenalized_cols=penalty.unpenalized_cols)
    solver = solve_coupled_lasso if coupled else solve_separate_lasso
    report = solver(problem, B0=params.B[k - 1])
    return report.B


def _spd_from_scatter(scatter: np.ndarray, n: int, sigma_jitter: float) -> np.ndarray:
    Sigma = scatter / n
    Sigma = (Sigma + Sigma.T) / 2.0
    lam_min = float(eigvalsh(Sigma)[0])
    trace = float(np.trace(Sigma))
    scale = trace / Sigma.shape[0] if trace > 0 else 1.0
    floor = sigma_jitter * scale
    # a barely-positive lam_min (duplicated responses give an exactly singular
    # scatter up to roundoff) still breaks Cholesky, so enforce a relative floor
    if lam_min <= floor:
        bump = floor - min(lam_min, 0.0)
        Sigma = Sigma + bump * np.eye(Sigma.shape[0])
    return Sigma


def update_sigma(resp: Responsibilities, params: ModelParams, data: Dataset,
                 sigma_jitter: float = 1e-8) -> np.ndarray:
    """Closed-form covariance: weighted residual scatter over all patterns / n.

    Symmetrized; if the smallest eigenvalue is <= 0 a diagonal jitter scaled
    by trace/q restores positive definiteness.
    """
    patterns = params.patterns
    scatter = np.zeros((data.q, data.q))
    for i, pattern in enumerate(patterns):
        z = resp.z[:, i]
        if not np.any(z > 0):
            continue
        R = data.Y - data.X @ params.pattern_coef(pattern)
        scatter += R.T @ (z[:, None] * R)
    return _spd_from_scatter(scatter, data.n, sigma_jitter)


def prune(params: ModelParams, resp: Responsibilities,
          threshold: float) -> tuple[ModelParams, Responsibilities, list[OverlapPattern]]:
    """Zero out patterns with pi below threshold and renormalize.

    Responsibilities are redistributed by the E-step restricted to surviving
    patterns, which is identical to renormalizing the surviving columns row
    by row (the shared normalizer cancels), so no data pass is needed.
    """
    if not 0 <= threshold < 1:
        raise DataValidationError("threshold must lie in [0, 1)")
    patterns = params.patterns
    piv = params.pi_vector()
    survive = piv >= threshold
    pruned = [patterns[i] for i in range(len(patterns)) if piv[i] > 0 and not survive[i]]
    if not np.any(survive & (piv > 0)):
        raise NumericalError("pruning removed every pattern; model degenerate")
    if not pruned:
        return params, resp, []
    new_pi_vec = np.where(survive, piv, 0.0)
    new_pi_vec = new_pi_vec / new_pi_vec.sum()
    new_params = ModelParams(
        B=params.B, Sigma=params.Sigma,
        pi={p: float(v) for p, v in zip(patterns, new_pi_vec)},
    )
    z = resp.z * survive[None, :]
    rowsum = z.sum(axis=1, keepdims=True)
    dead_rows = rowsum[:, 0] <= 0.0
    if np.any(dead_rows):
        # all surviving-pattern mass underflowed for these rows: spread evenly
        z[dead_rows] = survive.astype(float) / survive.sum()
        rowsum = z.sum(axis=1, keepdims=True)
    z = z / rowsum
    return new_params, Responsibilities(z=z, patterns=patterns), pruned


def count_effective_params(params: ModelParams) -> int:
    """Nonzero coefficients + free mixing weights + free covariance entries."""
    n_b = sum(int(np.sum(np.abs(Bk) > NONZERO_TOL)) for Bk in params.B)
    n_pi = int(np.sum(params.pi_vector() > NONZERO_TOL)) - 1
    iu = np.triu_indices(params.q)
    n_sigma = int(np.sum(np.abs(params.Sigma[iu]) > NONZERO_TOL))
    return n_b + n_pi + n_sigma


def hard_assignments(resp: Responsibilities) -> np.ndarray:
    """n x K binary memberships from each row's argmax pattern.

    Canonical pattern order is by cardinality then lexicographic and argmax
    takes the first maximum, so ties resolve toward fewer, smaller labels.
    """
    patterns = resp.patterns
    best = np.argmax(resp.z, axis=1)
    out = np.zeros((resp.n, patterns.K), dtype=int)
    for i, t in enumerate(best):
        for k in patterns[t]:
            out[i, k - 1] = 1
    return out


def objective_memberships(resp: Responsibilities, alpha: float = 0.5) -> np.ndarray:
    """n x K binary memberships by thresholding per-cluster posterior mass.

    Cluster k's mass for row i is the sum of responsibilities over patterns
    containing k; membership is mass >= alpha. Rows may get zero clusters.
    """
    patterns = resp.patterns
    out = np.zeros((resp.n, patterns.K), dtype=int)
    for k in range(1, patterns.K + 1):
        mass = resp.z[:, patterns.containing(k)].sum(axis=1)
        out[:, k - 1] = mass >= alpha
    return out


def _kmeans_rows(Y: np.ndarray, K: int, rng, n_iter: int = 50) -> np.ndarray:
    """Tiny seeded k-means on Y rows; labels in 0..K-1, every group nonempty."""
    n = Y.shape[0]
    if K >= n:
        return np.arange(n) % K
    centers = Y[rng.choice(n, size=K, replace=False)].copy()
    labels = np.full(n, -1, dtype=int)
    for _it in range(n_iter):
        d2 = ((Y[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for k in range(K):
            rows = labels == k
            if np.any(rows):
                centers[k] = Y[rows].mean(axis=0)
    return _repair_empty_groups(labels, K)


def _repair_empty_groups(labels: np.ndarray, K: int) -> np.ndarray:
    """Move one row out of the largest group into each empty group."""
    labels = labels.copy()
    for k in range(K):
        if not np.any(labels == k):
            counts = np.bincount(labels, minlength=K)
            donor = int(np.argmax(counts))
            labels[int(np.flatnonzero(labels == donor)[0])] = k
    return labels


def initial_params(data: Dataset, config: EmConfig, restart: int = 0) -> ModelParams:
    """Seeded start: k-means groups on Y, per-group least squares, singleton-heavy pi."""
    rng = rng_stream(config.seed, restart)
    K = config.K
    labels = _kmeans_rows(data.Y, K, rng)
    patterns = enumerate_patterns(K)
    B = []
    resid_blocks = []
    for k in range(K):
        rows = labels == k
        Bk, *_ = np.linalg.lstsq(data.X[rows], data.Y[rows], rcond=None)
        B.append(Bk)
        resid_blocks.append(data.Y[rows] - data.X[rows] @ Bk)
    resid = np.vstack(resid_blocks)
    Sigma = _spd_from_scatter(resid.T @ resid, data.n, max(config.sigma_jitter, 1e-10))
    sizes = np.array([(labels == k).sum() for k in range(K)], dtype=float)
    shares = sizes / sizes.sum()
    pi = {}
    n_nonsingleton = len(patterns) - K
    singleton_mass = 1.0 if (config.singleton_only or n_nonsingleton == 0) else 0.9
    for i, pattern in enumerate(patterns):
        if len(pattern) == 1:
            pi[pattern] = singleton_mass * shares[pattern.members[0] - 1]
        else:
            pi[pattern] = (1.0 - singleton_mass) / n_nonsingleton
    return ModelParams(B=tuple(B), Sigma=Sigma, pi=pi)


def _run_once(data: Dataset, config: EmConfig, start: ModelParams,
              penalty_schedule=None):
    params = start
    penalty = config.penalty
    trace = [log_likelihood(params, data)]
    pruned_all: list[OverlapPattern] = []
    best_pen = penalized_log_likelihood(params, data, penalty)
    best_params = params
    converged = False
    iterations = 0
    for it in range(1, config.max_iter + 1):
        iterations = it
        resp = e_step(params, data)
        pi_new = update_pi(resp)
        if penalty_schedule is not None:
            penalty = penalty_schedule(it, resp, pi_new, params)
        # update clusters in decreasing order of mixing mass so the result is
        # equivariant to relabeling; ties fall back to the smaller label
        patterns = params.patterns
        masses = [(float(sum(pi_new[i] for i in patterns.containing(k))), -k)
                  for k in range(1, config.K + 1)]
        order = [-m[1] for m in sorted(masses, reverse=True)]
        B_list = list(params.B)
        pi_dict = {p: float(v) for p, v in zip(patterns, pi_new)}
        work = ModelParams(B=tuple(B_list), Sigma=params.Sigma, pi=pi_dict)
        for k in order:
            try:
                B_list[k - 1] = update_B_k(k, resp, pi_new, work, data,
                                           penalty, config.coupled)
            except EmptyComponentError:
                B_list[k - 1] = np.zeros_like(B_list[k - 1])
            work = ModelParams(B=tuple(B_list), Sigma=params.Sigma, pi=pi_dict)
        Sigma_new = update_sigma(resp, work, data, config.sigma_jitter)
        params = ModelParams(B=tuple(B_list), Sigma=Sigma_new, pi=pi_dict)
        if config.prune_threshold > 0:
            params, resp, pruned = prune(params, resp, config.prune_threshold)
            pruned_all.extend(pruned)
        ll = log_likelihood(params, data)
        if not np.isfinite(ll):
            raise NumericalError(f"log-likelihood became non-finite at iteration {it}")
        trace.append(ll)
        pen = penalized_log_likelihood(params, data, penalty)
        if pen > best_pen:
            best_pen = pen
            best_params = params
        prev = trace[-2]
        if abs(ll - prev) / max(abs(prev), 1e-10) < config.rel_tol:
            converged = True
            break
    return best_params, best_pen, trace, pruned_all, converged, iterations


def fit_em(data: Dataset, config: EmConfig, init: ModelParams | None = None) -> FitResult:
    """Fit by restarted EM; returns the restart with the best penalized log-likelihood."""
    patterns = enumerate_patterns(config.K)
    if data.n < config.K:
        raise DataValidationError(f"need at least K={config.K} observations, got {data.n}")
    if data.n <= len(patterns):
        warnings.warn(
            f"n={data.n} does not exceed the pattern count {len(patterns)}; "
            "estimates will be unstable", stacklevel=2)
    if init is not None and (init.K != config.K or init.p != data.p or init.q != data.q):
        raise DataValidationError("init dimensions do not match data/config")
    starts = [init] if init is not None else [
        initial_params(data, config, restart=r) for r in range(config.n_restarts)
    ]
    best = None
    for r, start in enumerate(starts):
        outcome = _run_once(data, config, start)
        if best is None or outcome[1] > best[1][1]:
            best = (r, outcome)
    r_best, (params, pen, trace, pruned_all, converged, iterations) = best
    resp = e_step(params, data)
    return FitResult(
        params=params,
        resp=resp,
        hard=hard_assignments(resp),
        loglik_trace=tuple(trace),
        penalized_loglik=float(pen),
        n_effective_params=count_effective_params(params),
        pruned_patterns=tuple(pruned_all),
        converged=converged,
        iterations=iterations,
        restart_index=r_best,
    )
