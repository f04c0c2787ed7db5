"""Model types and the observed-data (penalized) log-likelihood.

The model: each observation i carries a latent overlap pattern t (a nonempty
subset of the K objective clusters) drawn with probability pi_t, and

    y_i | t  ~  N_q( sum_{k in t} B_k^T x_i ,  Sigma ).

The mixture over all 2**K - 1 patterns generalizes the classical finite
mixture of multivariate regressions, which is recovered exactly when pi puts
mass only on singleton patterns.

Everything here is a pure function of immutable values; densities are always
evaluated in log space and mixed with a max-shifted log-sum-exp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .errors import DataValidationError, NumericalError
from .patterns import OverlapPattern, PatternSet, enumerate_patterns
from .util import frozen

SYM_TOL = 1e-10
PI_SUM_TOL = 1e-10


@dataclass(frozen=True)
class Dataset:
    """An n x p predictor matrix paired with an n x q response matrix."""

    X: np.ndarray
    Y: np.ndarray
    row_ids: tuple[str, ...] | None = None
    x_names: tuple[str, ...] | None = None
    y_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2:
            raise DataValidationError(f"X and Y must be 2-d, got shapes {X.shape} and {Y.shape}")
        if X.shape[0] != Y.shape[0]:
            raise DataValidationError(
                f"X and Y row counts differ: {X.shape[0]} vs {Y.shape[0]}"
            )
        if X.shape[0] < 1 or X.shape[1] < 1 or Y.shape[1] < 1:
            raise DataValidationError("need n >= 1, p >= 1, q >= 1")
        if not np.all(np.isfinite(X)):
            raise DataValidationError("X contains non-finite entries")
        if not np.all(np.isfinite(Y)):
            raise DataValidationError("Y contains non-finite entries")
        object.__setattr__(self, "X", frozen(X))
        object.__setattr__(self, "Y", frozen(Y))
        for name, width in (("row_ids", X.shape[0]), ("x_names", X.shape[1]), ("y_names", Y.shape[1])):
            val = getattr(self, name)
            if val is not None:
                val = tuple(str(v) for v in val)
                if len(val) != width:
                    raise DataValidationError(f"{name} has length {len(val)}, expected {width}")
                object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class PenaltyConfig:
    """Sparsity penalty applied to each cluster's coefficient matrix.

    kind "lasso" uses lambda1[k] * ||B_k||_1, "elastic_net" adds
    lambda2[k] * ||B_k||_2^2, "none" disables the penalty. Coefficient rows in
    ``unpenalized_cols`` (0-based predictor indices, e.g. an intercept column)
    are never shrunk.
    """

    kind: str = "none"
    lambda1: tuple[float, ...] = ()
    lambda2: tuple[float, ...] = ()
    unpenalized_cols: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.kind not in ("lasso", "elastic_net", "none"):
            raise DataValidationError(f"unknown penalty kind {self.kind!r}")
        l1 = tuple(float(v) for v in self.lambda1)
        l2 = tuple(float(v) for v in self.lambda2)
        if any(v < 0 for v in l1) or any(v < 0 for v in l2):
            raise DataValidationError("penalty tuning values must be >= 0")
        if self.kind != "elastic_net" and l2:
            raise DataValidationError("lambda2 is only meaningful for elastic_net")
        if self.kind == "elastic_net" and len(l2) != len(l1):
            raise DataValidationError("elastic_net needs one lambda2 per lambda1")
        object.__setattr__(self, "lambda1", l1)
        object.__setattr__(self, "lambda2", l2)
        object.__setattr__(self, "unpenalized_cols", frozenset(int(j) for j in self.unpenalized_cols))

    @classmethod
    def lasso(cls, lambda1, K: int | None = None, unpenalized_cols=()) -> "PenaltyConfig":
        l1 = _broadcast_lambda(lambda1, K)
        return cls(kind="lasso", lambda1=l1, unpenalized_cols=frozenset(unpenalized_cols))

    @classmethod
    def elastic_net(cls, lambda1, lambda2, K: int | None = None, unpenalized_cols=()) -> "PenaltyConfig":
        l1 = _broadcast_lambda(lambda1, K)
        l2 = _broadcast_lambda(lambda2, K if K is not None else len(l1))
        return cls(kind="elastic_net", lambda1=l1, lambda2=l2,
                   unpenalized_cols=frozenset(unpenalized_cols))

    @classmethod
    def none(cls) -> "PenaltyConfig":
        return cls(kind="none")

    def lam1(self, k: int) -> float:
        """lambda1 for 1-based cluster k; 0 when the penalty is off."""
        if self.kind == "none" or not self.lambda1:
            return 0.0
        return self.lambda1[k - 1]

    def lam2(self, k: int) -> float:
        if self.kind != "elastic_net" or not self.lambda2:
            return 0.0
        return self.lambda2[k - 1]


def _broadcast_lambda(value, K: int | None) -> tuple[float, ...]:
    if np.isscalar(value):
        if K is None:
            raise DataValidationError("scalar lambda needs K to broadcast")
        return (float(value),) * K
    vals = tuple(float(v) for v in value)
    if K is not None and len(vals) != K:
        raise DataValidationError(f"expected {K} lambda values, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set: K coefficient matrices, error covariance, pattern weights.

    ``pi`` maps every pattern of ``enumerate_patterns(K)`` to its mixing
    weight; weights must sum to 1 and Sigma must pass a Cholesky factorization
    (a failed factorization raises instead of being silently repaired).
    """

    B: tuple[np.ndarray, ...]
    Sigma: np.ndarray
    pi: dict[OverlapPattern, float]

    def __post_init__(self):
        if len(self.B) < 1:
            raise DataValidationError("need at least one coefficient matrix")
        mats = []
        shape = None
        for k, Bk in enumerate(self.B, start=1):
            Bk = np.asarray(Bk, dtype=float)
            if Bk.ndim != 2:
                raise DataValidationError(f"B_{k} must be 2-d")
            if shape is None:
                shape = Bk.shape
            elif Bk.shape != shape:
                raise DataValidationError(f"B_{k} shape {Bk.shape} differs from {shape}")
            if not np.all(np.isfinite(Bk)):
                raise DataValidationError(f"B_{k} contains non-finite entries")
            mats.append(frozen(Bk))
        object.__setattr__(self, "B", tuple(mats))

        Sigma = np.asarray(self.Sigma, dtype=float)
        q = self.B[0].shape[1]
        if Sigma.shape != (q, q):
            raise DataValidationError(f"Sigma shape {Sigma.shape} does not match q={q}")
        if not np.all(np.isfinite(Sigma)):
            raise DataValidationError("Sigma contains non-finite entries")
        if np.max(np.abs(Sigma - Sigma.T)) > SYM_TOL:
            raise DataValidationError("Sigma is not symmetric within 1e-10")
        _chol_lower(Sigma)  # raises NumericalError when not SPD
        object.__setattr__(self, "Sigma", frozen(Sigma))

        patterns = enumerate_patterns(len(self.B))
        pi = {p: float(self.pi.get(p, 0.0)) for p in patterns}
        if len(self.pi) != len(pi) or any(key not in pi for key in self.pi):
            raise DataValidationError("pi keys must be exactly the patterns for K")
        if any(v < 0 for v in pi.values()):
            raise DataValidationError("pi values must be nonnegative")
        total = math.fsum(pi.values())
        if abs(total - 1.0) > PI_SUM_TOL:
            raise DataValidationError(f"pi must sum to 1 within 1e-10, got {total!r}")
        object.__setattr__(self, "pi", pi)

    @property
    def K(self) -> int:
        return len(self.B)

    @property
    def p(self) -> int:
        return self.B[0].shape[0]

    @property
    def q(self) -> int:
        return self.B[0].shape[1]

    @property
    def patterns(self) -> PatternSet:
        return enumerate_patterns(self.K)

    def pi_vector(self) -> np.ndarray:
        """pi aligned with the canonical pattern order."""
        return np.array([self.pi[p] for p in self.patterns], dtype=float)

    def pattern_coef(self, pattern: OverlapPattern) -> np.ndarray:
        """Summed coefficient matrix for one pattern: sum of its member B_k."""
        total = np.zeros_like(self.B[0])
        for k in pattern:
            total = total + self.B[k - 1]
        return total


@dataclass(frozen=True)
class Responsibilities:
    """Row-stochastic n x |T| posterior pattern memberships, canonical column order."""

    z: np.ndarray
    patterns: PatternSet

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2 or z.shape[1] != len(self.patterns):
            raise DataValidationError(
                f"responsibility matrix shape {z.shape} does not match |T|={len(self.patterns)}"
            )
        if np.any(z < -PI_SUM_TOL) or np.any(z > 1 + PI_SUM_TOL):
            raise DataValidationError("responsibilities must lie in [0, 1]")
        rows = z.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > PI_SUM_TOL:
            raise DataValidationError("responsibility rows must sum to 1 within 1e-10")
        object.__setattr__(self, "z", frozen(z))

    @property
    def n(self) -> int:
        return self.z.shape[0]


def _chol_lower(Sigma: np.ndarray) -> np.ndarray:
    try:
        return cholesky(Sigma, lower=True)
    except Exception as exc:
        raise NumericalError(f"covariance factorization failed: {exc}") from exc


def pattern_mean(x: np.ndarray, pattern: OverlapPattern, B) -> np.ndarray:
    """Mean response for one observation under one pattern: sum_k B_k^T x over members."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataValidationError("x must be a vector")
    if pattern.members[-1] > len(B):
        raise DataValidationError(f"pattern {pattern} references a cluster beyond K={len(B)}")
    q = np.asarray(B[0]).shape[1]
    out = np.zeros(q)
    for k in pattern:
        Bk = np.asarray(B[k - 1], dtype=float)
        if Bk.shape[0] != x.shape[0]:
            raise DataValidationError(f"B_{k} has {Bk.shape[0]} rows, x has length {x.shape[0]}")
        out += Bk.T @ x
    return out


def mvn_logpdf(y: np.ndarray, mean: np.ndarray, Sigma: np.ndarray) -> float:
    """Log density of N_q(mean, Sigma) at y, via Cholesky (no explicit inverse)."""
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    q = y.shape[0]
    if mean.shape != (q,) or Sigma.shape != (q, q):
        raise DataValidationError("mvn_logpdf dimension mismatch")
    L = _chol_lower(Sigma)
    half = solve_triangular(L, y - mean, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (q * math.log(2.0 * math.pi) + logdet + float(half @ half))


def _pattern_log_densities(params: ModelParams, data: Dataset,
                           active: np.ndarray) -> np.ndarray:
    """n x n_active matrix of log N(y_i | mean under pattern, Sigma).

    Only patterns flagged in ``active`` are evaluated; columns line up with
    the active subset of the canonical order.
    """
    patterns = params.patterns
    L = _chol_lower(params.Sigma)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    const = -0.5 * (data.q * math.log(2.0 * math.pi) + logdet)
    cols = []
    for idx, pattern in enumerate(patterns):
        if not active[idx]:
            continue
        resid = data.Y - data.X @ params.pattern_coef(pattern)
        half = solve_triangular(L, resid.T, lower=True)
        cols.append(const - 0.5 * np.sum(half * half, axis=0))
    return np.column_stack(cols) if cols else np.zeros((data.n, 0))


def pattern_log_joint(params: ModelParams, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """(active mask over patterns, n x n_active matrix of log pi_t + log f_t).

    Patterns with pi == 0 are skipped entirely; their densities are never
    evaluated.
    """
    piv = params.pi_vector()
    active = piv > 0.0
    logdens = _pattern_log_densities(params, data, active)
    return active, logdens + np.log(piv[active])[None, :]


def log_likelihood(params: ModelParams, data: Dataset) -> float:
    """Observed-data log-likelihood: sum_i log sum_t pi_t f(y_i | t)."""
    if params.p != data.p or params.q != data.q:
        raise DataValidationError(
            f"params ({params.p}, {params.q}) do not match data ({data.p}, {data.q})"
        )
    _, logjoint = pattern_log_joint(params, data)
    # max-shifted log-sum-exp per row
    m = np.max(logjoint, axis=1)
    ll = m + np.log(np.sum(np.exp(logjoint - m[:, None]), axis=1))
    return float(np.sum(ll))


def penalty_value(params: ModelParams, penalty: PenaltyConfig) -> float:
    """Mixture-weighted sparsity penalty.

    Each cluster's penalty is scaled by the total mixing mass of the patterns
    containing it, tying shrinkage strength to how many observations the
    cluster explains.
    """
    if penalty.kind == "none":
        return 0.0
    if penalty.lambda1 and len(penalty.lambda1) != params.K:
        raise DataValidationError(
            f"penalty has {len(penalty.lambda1)} lambda1 values, model has K={params.K}"
        )
    mask = np.ones(params.p, dtype=bool)
    for j in penalty.unpenalized_cols:
        if 0 <= j < params.p:
            mask[j] = False
    total = 0.0
    for k in range(1, params.K + 1):
        weight = math.fsum(v for p, v in params.pi.items() if k in p)
        Bk = params.B[k - 1][mask]
        rho = penalty.lam1(k) * float(np.sum(np.abs(Bk)))
        if penalty.kind == "elastic_net":
            rho += penalty.lam2(k) * float(np.sum(Bk * Bk))
        total += weight * rho
    return total


def penalized_log_likelihood(params: ModelParams, data: Dataset,
                             penalty: PenaltyConfig) -> float:
    return log_likelihood(params, data) - penalty_value(params, penalty)
