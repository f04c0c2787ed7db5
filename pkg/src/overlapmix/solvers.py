"""Weighted penalized regression solvers for the M-step.

Two conventions for the same stacked problem (rows are (observation, pattern)
pairs, weights are posterior memberships):

* separate:  sum_m  1/2 sum_i w_i (y*_im - x_i^T b_m)^2 + lam1 ||b_m||_1
             + lam2 ||b_m||_2^2        (columns decouple, elastic net allowed)
* coupled:   tr((Y* - XB)^T W (Y* - XB) Omega) + 2 lam1 ||B||_1
             with Omega = Sigma^{-1}   (columns coupled through Omega)

Both are solved by cyclic coordinate descent with soft-thresholding, Gram
matrices precomputed, and residual cross-products maintained incrementally.
Each sweep's objective is checked to be non-increasing; a break signals a
numerical problem and raises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky

from .errors import DataValidationError, NumericalError
from .util import frozen

CD_TOL = 1e-7
CD_KKT_STOP = 1e-8
CD_MAX_SWEEPS = 10_000
FULL_SWEEP_EVERY = 10
MONOTONE_SLACK = 1e-8


@dataclass(frozen=True)
class StackedProblem:
    """One weighted penalized regression: X (m x p), Ystar (m x q), weights w.

    ``SigmaInv`` switches the coupled convention on; ``unpenalized_cols`` are
    0-based predictor indices whose coefficient rows are never shrunk.
    """

    X: np.ndarray
    Ystar: np.ndarray
    w: np.ndarray
    lambda1: float = 0.0
    lambda2: float = 0.0
    SigmaInv: np.ndarray | None = None
    unpenalized_cols: frozenset[int] = frozenset()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Ystar, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if X.ndim != 2 or Y.ndim != 2 or w.ndim != 1:
            raise DataValidationError("X and Ystar must be 2-d, w 1-d")
        m = X.shape[0]
        if Y.shape[0] != m or w.shape[0] != m:
            raise DataValidationError(
                f"row counts disagree: X {m}, Ystar {Y.shape[0]}, w {w.shape[0]}"
            )
        for name, a in (("X", X), ("Ystar", Y), ("w", w)):
            if not np.all(np.isfinite(a)):
                raise DataValidationError(f"{name} contains non-finite entries")
        if np.any(w < 0):
            raise DataValidationError("weights must be nonnegative")
        if not np.any(w > 0):
            raise DataValidationError("need at least one strictly positive weight")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise DataValidationError("penalty values must be >= 0")
        if self.lambda2 > 0 and self.SigmaInv is not None:
            raise DataValidationError(
                "lambda2 requires the separate solver, which does not accept SigmaInv"
            )
        object.__setattr__(self, "lambda1", float(self.lambda1))
        object.__setattr__(self, "lambda2", float(self.lambda2))
        object.__setattr__(self, "X", frozen(X))
        object.__setattr__(self, "Ystar", frozen(Y))
        object.__setattr__(self, "w", frozen(w))
        if self.SigmaInv is not None:
            S = np.asarray(self.SigmaInv, dtype=float)
            q = Y.shape[1]
            if S.shape != (q, q):
                raise DataValidationError(f"SigmaInv shape {S.shape} does not match q={q}")
            if not np.all(np.isfinite(S)):
                raise DataValidationError("SigmaInv contains non-finite entries")
            if np.max(np.abs(S - S.T)) > 1e-10:
                raise DataValidationError("SigmaInv is not symmetric within 1e-10")
            try:
                cholesky(S, lower=True)
            except Exception as exc:
                raise NumericalError(f"SigmaInv is not positive definite: {exc}") from exc
            object.__setattr__(self, "SigmaInv", frozen(S))
        cols = frozenset(int(j) for j in self.unpenalized_cols)
        if any(j < 0 or j >= X.shape[1] for j in cols):
            raise DataValidationError("unpenalized_cols out of range")
        object.__setattr__(self, "unpenalized_cols", cols)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Ystar.shape[1]

    def penalized_row_mask(self) -> np.ndarray:
        mask = np.ones(self.p, dtype=bool)
        for j in self.unpenalized_cols:
            mask[j] = False
        return mask


@dataclass(frozen=True)
class SolverReport:
    """Solution plus audit trail; ``converged`` is False when the sweep cap hit."""

    B: np.ndarray
    iterations: int
    max_kkt_violation: float
    objective: float
    converged: bool = True

    def __post_init__(self):
        if self.max_kkt_violation < 0:
            raise DataValidationError("max_kkt_violation must be >= 0")
        if not np.isfinite(self.objective):
            raise DataValidationError("objective must be finite")
        object.__setattr__(self, "B", frozen(np.asarray(self.B, dtype=float)))


def _soft(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def _grams(problem: StackedProblem):
    Xw = problem.X * problem.w[:, None]
    G = problem.X.T @ Xw                       # X^T W X, p x p
    C = problem.X.T @ (problem.w[:, None] * problem.Ystar)  # X^T W Y*, p x q
    YtWY = problem.Ystar.T @ (problem.w[:, None] * problem.Ystar)  # q x q
    return G, C, YtWY


def lambda_max(problem: StackedProblem) -> float:
    """Smallest lambda1 at which B = 0 is optimal (penalized rows only).

    Separate convention: max |X^T W Y*|; coupled: max |X^T W Y* SigmaInv|.
    Zero when every row is unpenalized.
    """
    _, C, _ = _grams(problem)
    score = C if problem.SigmaInv is None else C @ problem.SigmaInv
    mask = problem.penalized_row_mask()
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(score[mask])))


def kkt_violation(problem: StackedProblem, B: np.ndarray) -> float:
    """Max subgradient-condition violation of B for the problem's objective.

    Nonzero entries: |gradient + lam * sign(b)|; zero entries:
    max(|gradient| - lam, 0); unpenalized rows use lam = 0.
    """
    B = np.asarray(B, dtype=float)
    if B.shape != (problem.p, problem.q):
        raise DataValidationError(f"B shape {B.shape} does not match ({problem.p}, {problem.q})")
    G, C, _ = _grams(problem)
    mask = problem.penalized_row_mask()
    if problem.SigmaInv is None:
        grad = G @ B - C                      # d/dB of 1/2 sum w r^2
        grad[mask] += 2.0 * problem.lambda2 * B[mask]
        lam = problem.lambda1
    else:
        Om = problem.SigmaInv
        grad = 2.0 * ((G @ B - C) @ Om)       # d/dB of tr(R^T W R Omega)
        lam = 2.0 * problem.lambda1
    lam_rows = np.where(mask, lam, 0.0)[:, None]
    nonzero = B != 0.0
    viol_nonzero = np.abs(grad + lam_rows * np.sign(B))
    viol_zero = np.maximum(np.abs(grad) - lam_rows, 0.0)
    return float(np.max(np.where(nonzero, viol_nonzero, viol_zero)))


def _check_monotone(obj, prev, where):
    if obj > prev + MONOTONE_SLACK * (1.0 + abs(prev)):
        raise NumericalError(
            f"{where}: objective rose from {prev!r} to {obj!r} within one sweep"
        )


def solve_separate_lasso(problem: StackedProblem, B0: np.ndarray | None = None,
                         tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS) -> SolverReport:
    """Column-decoupled solve; elastic net when problem.lambda2 > 0.

    All q columns share the design, so each cyclic pass updates coefficient
    row j simultaneously for every response column (the columns are
    independent problems run in lockstep). ``B0`` warm-starts the solve.
    """
    if problem.SigmaInv is not None:
        raise DataValidationError("separate solver does not accept SigmaInv; use solve_coupled_lasso")
    p, q = problem.p, problem.q
    G, C, YtWY = _grams(problem)
    Gdiag = np.diag(G).copy()
    lam1, lam2 = problem.lambda1, problem.lambda2
    pen = problem.penalized_row_mask()
    const_yy = float(np.trace(YtWY))

    B = np.zeros((p, q)) if B0 is None else np.array(B0, dtype=float)
    if B.shape != (p, q):
        raise DataValidationError(f"B0 shape {B.shape} does not match ({p}, {q})")
    Mres = C - G @ B                          # X^T W (Y* - XB)

    def objective():
        quad = 0.5 * (const_yy - float(np.sum(B * C)) - float(np.sum(B * Mres)))
        pen_val = lam1 * float(np.sum(np.abs(B[pen]))) + lam2 * float(np.sum(B[pen] ** 2))
        return quad + pen_val

    def kkt_now():
        grad = -Mres.copy()
        grad[pen] += 2.0 * lam2 * B[pen]
        lam_rows = np.where(pen, lam1, 0.0)[:, None]
        v = np.where(B != 0.0, np.abs(grad + lam_rows * np.sign(B)),
                     np.maximum(np.abs(grad) - lam_rows, 0.0))
        return float(np.max(v))

    def sweep(rows):
        nonlocal Mres
        max_change = 0.0
        for j in rows:
            denom = Gdiag[j] + (2.0 * lam2 if pen[j] else 0.0)
            if denom <= 0.0:
                new = np.zeros(q)
            else:
                rho = Mres[j] + Gdiag[j] * B[j]
                new = (_soft(rho, lam1) if pen[j] else rho) / denom
            delta = new - B[j]
            if np.any(delta != 0.0):
                max_change = max(max_change, float(np.max(np.abs(delta))))
                B[j] = new
                Mres -= np.outer(G[:, j], delta)
        return max_change

    all_rows = np.arange(p)
    prev_obj = objective()
    sweeps = 0
    converged = False
    need_full = True
    while sweeps < max_sweeps:
        sweeps += 1
        full = need_full or sweeps % FULL_SWEEP_EVERY == 0
        rows = all_rows if full else np.flatnonzero(np.any(B != 0.0, axis=1) | ~pen)
        max_change = sweep(rows)
        obj = objective()
        _check_monotone(obj, prev_obj, "solve_separate_lasso")
        prev_obj = obj
        if max_change < tol:
            if full and kkt_now() < CD_KKT_STOP:
                converged = True
                break
            need_full = True
        else:
            need_full = False
    return SolverReport(B=B, iterations=sweeps, max_kkt_violation=kkt_violation(problem, B),
                        objective=prev_obj, converged=converged)


def solve_coupled_lasso(problem: StackedProblem, B0: np.ndarray | None = None,
                        tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS) -> SolverReport:
    """Covariance-coupled solve: tr((Y*-XB)^T W (Y*-XB) SigmaInv) + 2 lam1 ||B||_1.

    Entries are updated strictly one at a time (SigmaInv couples the response
    columns, so lockstep row updates would break per-update monotonicity).
    The cross-product M = X^T W (Y* - XB) SigmaInv is maintained incrementally:
    changing B_jm by delta shifts M by -delta * outer(G[:, j], SigmaInv[m, :]).
    """
    if problem.SigmaInv is None:
        raise DataValidationError("coupled solver needs SigmaInv; use solve_separate_lasso")
    if problem.lambda2 != 0.0:
        raise DataValidationError("elastic net is only supported by the separate solver")
    p, q = problem.p, problem.q
    G, C, YtWY = _grams(problem)
    Om = problem.SigmaInv
    Gdiag = np.diag(G).copy()
    lam1 = problem.lambda1
    pen = problem.penalized_row_mask()
    COm = C @ Om
    const_yy = float(np.sum(YtWY * Om))       # tr(Y*^T W Y* Omega)

    B = np.zeros((p, q)) if B0 is None else np.array(B0, dtype=float)
    if B.shape != (p, q):
        raise DataValidationError(f"B0 shape {B.shape} does not match ({p}, {q})")
    M = COm - (G @ B) @ Om                    # X^T W (Y* - XB) Omega

    def objective():
        quad = const_yy - float(np.sum(B * COm)) - float(np.sum(B * M))
        return quad + 2.0 * lam1 * float(np.sum(np.abs(B[pen])))

    def kkt_now():
        grad = -2.0 * M
        lam_rows = np.where(pen, 2.0 * lam1, 0.0)[:, None]
        v = np.where(B != 0.0, np.abs(grad + lam_rows * np.sign(B)),
                     np.maximum(np.abs(grad) - lam_rows, 0.0))
        return float(np.max(v))

    def sweep(rows):
        nonlocal M
        max_change = 0.0
        for j in rows:
            gj = G[:, j]
            for m in range(q):
                a = Gdiag[j] * Om[m, m]
                if a <= 0.0:
                    new = 0.0
                else:
                    u = a * B[j, m] + M[j, m]
                    new = (_soft(u, lam1) if pen[j] else u) / a
                delta = new - B[j, m]
                if delta != 0.0:
                    max_change = max(max_change, abs(delta))
                    B[j, m] = new
                    M -= delta * np.outer(gj, Om[m])
        return max_change

    all_rows = np.arange(p)
    prev_obj = objective()
    sweeps = 0
    converged = False
    need_full = True
    while sweeps < max_sweeps:
        sweeps += 1
        full = need_full or sweeps % FULL_SWEEP_EVERY == 0
        rows = all_rows if full else np.flatnonzero(np.any(B != 0.0, axis=1) | ~pen)
        max_change = sweep(rows)
        obj = objective()
        _check_monotone(obj, prev_obj, "solve_coupled_lasso")
        prev_obj = obj
        if max_change < tol:
            if full and kkt_now() < CD_KKT_STOP:
                converged = True
                break
            need_full = True
        else:
            need_full = False
    return SolverReport(B=B, iterations=sweeps, max_kkt_violation=kkt_violation(problem, B),
                        objective=prev_obj, converged=converged)
