"""Exemplar-based grouping by affinity propagation.

Similarities are negative squared Euclidean distances; the diagonal holds
the preference (prior willingness of a point to serve as an exemplar).
Message passing follows the classic responsibility/availability updates
with damping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataValidationError
from .util import frozen

DEFAULT_DAMPING = 0.9
DEFAULT_MAX_ITER = 1000
DEFAULT_STABLE_ITERS = 50
JITTER_SCALE = 1e-12
TIE_REL_TOL = 1e-9


@dataclass(frozen=True)
class SimilarityMatrix:
    """Square similarity matrix plus exemplar preference(s).

    The stored diagonal is irrelevant: it is overwritten by the preference
    before any message passing.
    """

    S: np.ndarray
    preference: float | np.ndarray

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DataValidationError(f"similarity matrix must be square, got {S.shape}")
        if not np.all(np.isfinite(S)):
            raise DataValidationError("similarities must be finite")
        pref = self.preference
        if np.isscalar(pref):
            pref = float(pref)
            if not np.isfinite(pref):
                raise DataValidationError("preference must be finite")
        else:
            pref = np.asarray(pref, dtype=float)
            if pref.shape != (S.shape[0],):
                raise DataValidationError(
                    f"per-point preference needs shape ({S.shape[0]},), got {pref.shape}")
            if not np.all(np.isfinite(pref)):
                raise DataValidationError("preference must be finite")
            pref = frozen(pref)
        object.__setattr__(self, "S", frozen(S))
        object.__setattr__(self, "preference", pref)

    @property
    def n(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True)
class ApcResult:
    exemplars: tuple[int, ...]
    assignment: np.ndarray
    converged: bool
    iterations: int

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=int)
        ex = set(self.exemplars)
        if not ex:
            raise DataValidationError("need at least one exemplar")
        if set(np.unique(assignment)) - ex:
            raise DataValidationError("assignment targets must be exemplars")
        if any(assignment[e] != e for e in ex):
            raise DataValidationError("exemplars must be self-assigned")
        object.__setattr__(self, "assignment", frozen(assignment, dtype=int))

    def groups(self) -> dict[int, tuple[int, ...]]:
        return {e: tuple(np.flatnonzero(self.assignment == e)) for e in self.exemplars}


def similarity_from_rows(rows) -> SimilarityMatrix:
    """Negative squared Euclidean distances; preference = median off-diagonal."""
    try:
        R = np.asarray(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataValidationError(f"rows must form a rectangular array: {exc}") from exc
    if R.ndim != 2:
        raise DataValidationError("rows must form a 2-D array")
    if R.shape[0] < 2:
        raise DataValidationError("need at least 2 rows")
    if not np.all(np.isfinite(R)):
        raise DataValidationError("rows must be finite")
    S = -cdist(R, R, "sqeuclidean")
    off = S[~np.eye(len(S), dtype=bool)]
    return SimilarityMatrix(S=S, preference=float(np.median(off)))


def _index_hash(n: int) -> np.ndarray:
    """Deterministic per-entry values in [0, 1) used to break exact ties."""
    idx = np.arange(n, dtype=np.uint64)
    key = idx[:, None] * np.uint64(2654435761) + idx[None, :] * np.uint64(97531)
    key = (key ^ (key >> np.uint64(13))) * np.uint64(0x9E3779B97F4A7C15)
    return (key >> np.uint64(11)).astype(float) / float(1 << 53)


def _fully_tied(sim: SimilarityMatrix) -> bool:
    """True when every off-diagonal similarity and the preference coincide.

    Such a matrix carries no grouping evidence at all (joining any exemplar
    costs exactly as much as standing alone), so message passing would be
    decided purely by tie-break noise.
    """
    off = sim.S[~np.eye(sim.n, dtype=bool)]
    vals = np.concatenate([off, np.atleast_1d(np.asarray(sim.preference, dtype=float))])
    scale = float(np.max(np.abs(vals)))
    return float(np.ptp(vals)) <= TIE_REL_TOL * scale


def _prepare_matrix(sim: SimilarityMatrix) -> np.ndarray:
    """Working matrix: preference on the diagonal, tie-breaking jitter added.

    Jitter is proportional to the matrix scale so that rescaling all
    similarities rescales the whole working matrix.
    """
    S = np.array(sim.S)
    np.fill_diagonal(S, sim.preference)
    scale = float(np.max(np.abs(S)))
    if scale == 0.0:
        scale = 1.0
    return S + (JITTER_SCALE * scale) * _index_hash(sim.n)


def affinity_propagation(sim: SimilarityMatrix,
                         damping: float = DEFAULT_DAMPING,
                         max_iter: int = DEFAULT_MAX_ITER,
                         stable_iters: int = DEFAULT_STABLE_ITERS) -> ApcResult:
    """Damped responsibility/availability passing until the exemplar set holds.

    Converged means a nonempty exemplar set survived `stable_iters`
    consecutive iterations. On non-convergence the current best guess is
    returned with converged=False.

    A fully tied similarity matrix (all off-diagonal entries equal to the
    preference, e.g. any 2-point problem under the median preference, or
    equidistant points) short-circuits to one-singleton-per-point: there is
    no evidence for merging, and the outcome should not hinge on jitter.
    """
    if not 0.5 <= damping < 1.0:
        raise DataValidationError("damping must lie in [0.5, 1)")
    if max_iter < 1:
        raise DataValidationError("max_iter must be at least 1")
    if stable_iters < 1:
        raise DataValidationError("stable_iters must be at least 1")
    n = sim.n
    if n == 1:
        return ApcResult(exemplars=(0,), assignment=np.zeros(1, dtype=int),
                         converged=True, iterations=0)
    if _fully_tied(sim):
        return ApcResult(exemplars=tuple(range(n)), assignment=np.arange(n),
                         converged=True, iterations=0)
    S = _prepare_matrix(sim)
    R = np.zeros((n, n))
    A = np.zeros((n, n))
    rows = np.arange(n)
    last: np.ndarray | None = None
    stable = 0
    converged = False
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        AS = A + S
        top = np.argmax(AS, axis=1)
        first = AS[rows, top]
        AS[rows, top] = -np.inf
        second = np.max(AS, axis=1)
        Rnew = S - first[:, None]
        Rnew[rows, top] = S[rows, top] - second
        R = damping * R + (1.0 - damping) * Rnew
        Rp = np.maximum(R, 0.0)
        Rp[rows, rows] = R[rows, rows]
        colsum = Rp.sum(axis=0)
        Anew = np.minimum(0.0, colsum[None, :] - Rp)
        Anew[rows, rows] = colsum - Rp[rows, rows]
        A = damping * A + (1.0 - damping) * Anew
        is_exemplar = (np.diagonal(A) + np.diagonal(R)) > 0
        if last is not None and np.array_equal(is_exemplar, last):
            stable += 1
        else:
            stable = 1
            last = is_exemplar
        if stable >= stable_iters and np.any(is_exemplar):
            converged = True
            break
    E = np.flatnonzero(last) if last is not None and np.any(last) else None
    if E is None:
        # best effort: the single most self-confident point
        E = np.array([int(np.argmax(np.diagonal(A) + np.diagonal(R)))])
        converged = False
    assignment = E[np.argmax(S[:, E], axis=1)]
    assignment[E] = E
    return ApcResult(exemplars=tuple(int(e) for e in E), assignment=assignment,
                     converged=converged, iterations=iterations)
