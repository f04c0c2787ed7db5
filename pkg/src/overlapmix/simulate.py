"""Synthetic data generators for the overlapping-cluster regression model.

Predictor rows and noise rows are AR(1)-correlated Gaussians; each cluster's
coefficient matrix is an elementwise product of a Gaussian matrix, an
entrywise Bernoulli mask, and a row on/off mask, giving row-structured
sparsity. Two membership designs: "partition" splits rows evenly across the
singleton patterns; "overlap" draws each row's pattern cardinality from fixed
fractions, then a uniform pattern of that cardinality.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.linalg import cholesky

from .core import Dataset
from .errors import DataValidationError
from .patterns import OverlapPattern, enumerate_patterns
from .util import frozen, rng_stream

PARTITION = "partition"
OVERLAP = "overlap"
DEFAULT_FRACTIONS = (0.70, 0.22, 0.08)


@dataclass(frozen=True)
class SimSpec:
    """Generator settings; defaults mirror the simulation-study design."""

    n: int
    p: int = 15
    q: int = 3
    K: int = 3
    rho_x: float = 0.5
    rho_e: float = 0.75
    p1: float = 0.5
    p2: float = 0.9
    scenario: str = PARTITION
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    seed: int = 0

    def __post_init__(self):
        enumerate_patterns(self.K)
        if self.n < 1 or self.p < 1 or self.q < 1:
            raise DataValidationError("n, p, q must be >= 1")
        if not (abs(self.rho_x) < 1 and abs(self.rho_e) < 1):
            raise DataValidationError("AR coefficients must satisfy |rho| < 1")
        if not (0 <= self.p1 <= 1 and 0 <= self.p2 <= 1):
            raise DataValidationError("p1 and p2 must lie in [0, 1]")
        if self.scenario not in (PARTITION, OVERLAP):
            raise DataValidationError(f"unknown scenario {self.scenario!r}")
        fr = tuple(float(f) for f in self.fractions)
        if self.scenario == OVERLAP:
            if len(fr) != self.K:
                raise DataValidationError(
                    f"need one fraction per cardinality 1..{self.K}, got {len(fr)}"
                )
            if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-10:
                raise DataValidationError("fractions must be nonnegative and sum to 1")
        object.__setattr__(self, "fractions", fr)


@dataclass(frozen=True)
class SimInstance:
    """Generated dataset plus the ground truth that produced it."""

    data: Dataset
    true_B: tuple[np.ndarray, ...]
    true_P: np.ndarray
    true_pattern: tuple[OverlapPattern, ...]
    noise: np.ndarray
    spec: SimSpec

    def __post_init__(self):
        object.__setattr__(self, "true_B", tuple(frozen(b) for b in self.true_B))
        object.__setattr__(self, "true_P", frozen(np.asarray(self.true_P), dtype=int))
        object.__setattr__(self, "noise", frozen(self.noise))
        if any(len(p) == 0 for p in self.true_pattern):
            raise DataValidationError("every row needs a nonempty pattern")

    def true_clusters(self) -> list[set[int]]:
        """Row indices of each objective cluster, from the membership matrix."""
        return [set(np.flatnonzero(self.true_P[:, k]).tolist())
                for k in range(self.true_P.shape[1])]


def ar_covariance(dim: int, rho: float) -> np.ndarray:
    """AR(1) covariance: entry (i, j) = rho^|i-j|."""
    if not abs(rho) < 1:
        raise DataValidationError(f"|rho| must be < 1, got {rho}")
    if dim < 1:
        raise DataValidationError("dim must be >= 1")
    idx = np.arange(dim)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def generate_sparse_B(p: int, q: int, p1: float, p2: float, rng) -> np.ndarray:
    """Elementwise product of N(0,1) draws, Bernoulli(p1) mask, row mask (p2)."""
    W = rng.normal(size=(p, q))
    S = rng.binomial(1, p1, size=(p, q))
    T = np.repeat(rng.binomial(1, p2, size=(p, 1)), q, axis=1)
    return W * S * T


def _correlated_rows(rng, n: int, cov: np.ndarray) -> np.ndarray:
    L = cholesky(cov, lower=True)
    return rng.normal(size=(n, cov.shape[0])) @ L.T


def _partition_patterns(n: int, K: int) -> list[OverlapPattern]:
    # n/K rows per singleton; remainders go to the earlier clusters
    base = n // K
    counts = [base + (1 if k < n % K else 0) for k in range(K)]
    out = []
    for k, c in enumerate(counts, start=1):
        out.extend([OverlapPattern((k,))] * c)
    return out


def _overlap_patterns(n: int, K: int, fractions, rng) -> list[OverlapPattern]:
    cards = rng.choice(np.arange(1, K + 1), size=n, p=np.asarray(fractions))
    by_card = {s: [OverlapPattern(c) for c in combinations(range(1, K + 1), s)]
               for s in range(1, K + 1)}
    out = []
    for s in cards:
        options = by_card[int(s)]
        out.append(options[int(rng.integers(len(options)))])
    return out


def simulate(spec: SimSpec) -> SimInstance:
    """Draw one instance; deterministic in spec (seed included)."""
    rng = rng_stream(spec.seed, 0)
    B = tuple(generate_sparse_B(spec.p, spec.q, spec.p1, spec.p2, rng)
              for _ in range(spec.K))
    X = _correlated_rows(rng, spec.n, ar_covariance(spec.p, spec.rho_x))
    noise = _correlated_rows(rng, spec.n, ar_covariance(spec.q, spec.rho_e))
    if spec.scenario == PARTITION:
        patterns = _partition_patterns(spec.n, spec.K)
    else:
        patterns = _overlap_patterns(spec.n, spec.K, spec.fractions, rng)
    P = np.zeros((spec.n, spec.K), dtype=int)
    for i, pat in enumerate(patterns):
        for k in pat:
            P[i, k - 1] = 1
    mean = signal_mean(X, B, P)
    Y = mean + noise
    # store the realized residual so Y - signal_mean reproduces it bitwise
    # (float addition does not round-trip through subtraction)
    residual = Y - mean
    return SimInstance(data=Dataset(X=X, Y=Y), true_B=B, true_P=P,
                       true_pattern=tuple(patterns), noise=residual, spec=spec)


def signal_mean(X: np.ndarray, B, P: np.ndarray) -> np.ndarray:
    """Noise-free responses: row i gets X[i] @ (sum of B_k over its memberships).

    Rows are processed grouped by membership row so the arithmetic order is
    reproducible: reconstructing with this function returns Y - noise exactly.
    """
    n = X.shape[0]
    q = np.asarray(B[0]).shape[1]
    mean = np.zeros((n, q))
    P = np.asarray(P)
    profiles = {}
    for i in range(n):
        profiles.setdefault(tuple(P[i].tolist()), []).append(i)
    for profile, rows in profiles.items():
        total = np.zeros_like(np.asarray(B[0]))
        for k, on in enumerate(profile):
            if on:
                total = total + np.asarray(B[k])
        mean[rows] = X[rows] @ total
    return mean
