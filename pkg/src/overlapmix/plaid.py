"""Layered overlapping-cluster baselines for multivariate regression.

Two fitters share one objective

    Q = 1/2 sum_i ||y_i - sum_k B_k' x_i P_ik||^2 + sum_k lambda_k ||B_k||_1

with binary row memberships P_ik. ``plaid_fit_sequential`` recruits layers
greedily, freezing each before searching for the next; ``plaid_fit_joint``
keeps all K layers live and cycles over them. Both relax memberships to
0.5 +/- delta(s) during the search and harden them as the schedule
saturates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, _broadcast_lambda
from .em import _kmeans_rows
from .errors import DataValidationError, NumericalError
from .solvers import StackedProblem, solve_separate_lasso
from .util import frozen, rng_stream

# a recruited layer whose largest coefficient is below this is noise, not
# structure; accepting it would stall the sequential search on junk layers
LAYER_COEF_TOL = 1e-8
PLAID_Q_SLACK = 1e-8


@dataclass(frozen=True)
class PlaidConfig:
    """Shared knobs for both layer fitters.

    S inner rounds anneal memberships from 0.5 toward {0,1}; the schedule
    reaches hard assignments once s >= S - T with T = T_frac * S. tau is the
    fraction of a row's residual norm a layer must explain to keep the row.
    """

    K: int
    S: int = 10
    T_frac: float = 0.2
    tau: float = 0.6
    R: int = 2
    lambda1: float | tuple[float, ...] = 0.0
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise DataValidationError("K must be a positive integer")
        if not isinstance(self.S, (int, np.integer)) or self.S < 1:
            raise DataValidationError("S must be a positive integer")
        if not 0.0 < self.T_frac < 1.0:
            raise DataValidationError("T_frac must lie strictly in (0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise DataValidationError("tau must lie strictly in (0, 1)")
        if not isinstance(self.R, (int, np.integer)) or self.R < 0:
            raise DataValidationError("R must be a nonnegative integer")
        lam = _broadcast_lambda(self.lambda1, self.K)
        if len(lam) != self.K:
            raise DataValidationError(f"need one lambda per layer, got {len(lam)}")
        if any(v < 0 for v in lam):
            raise DataValidationError("lambda1 must be nonnegative")
        object.__setattr__(self, "lambda1", lam)

    @property
    def T(self) -> float:
        return self.T_frac * self.S


@dataclass(frozen=True)
class PlaidLayer:
    B: np.ndarray
    members: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        members = np.asarray(self.members, dtype=float)
        if B.ndim != 2:
            raise DataValidationError("layer B must be a p x q matrix")
        if members.ndim != 1:
            raise DataValidationError("memberships must be a vector")
        if not np.all((members == 0.0) | (members == 1.0)):
            raise DataValidationError("final memberships must be exactly 0 or 1")
        object.__setattr__(self, "B", frozen(B))
        object.__setattr__(self, "members", frozen(members))

    def member_rows(self) -> np.ndarray:
        return np.flatnonzero(self.members == 1.0)


@dataclass(frozen=True)
class PlaidFit:
    layers: tuple[PlaidLayer, ...]
    residual_sse: float
    Q_value: float
    # Q after each sequential backfit pass, led by the pre-backfit value;
    # empty for the joint fitter
    backfit_q: tuple[float, ...] = ()


def relax_delta(s: int, S: int, T: float) -> float:
    """Half-width of the membership relaxation at inner iteration s."""
    return min(0.5, s / (2.0 * (S - T)))


def prune_members(X: np.ndarray, z: np.ndarray, B: np.ndarray, tau: float) -> np.ndarray:
    """Binary memberships: keep row i when the layer explains enough of z_i.

    Keeps ||z_i - B'x_i||^2 <= tau ||z_i||^2; ties (both sides zero) keep
    the row.
    """
    fitted = z - X @ B
    return (np.einsum("ij,ij->i", fitted, fitted)
            <= tau * np.einsum("ij,ij->i", z, z)).astype(float)


def plaid_objective(data: Dataset, layers, lambdas) -> tuple[float, float]:
    """(residual SSE, Q) for a set of layers with per-layer lasso weights."""
    pred = np.zeros_like(data.Y)
    pen = 0.0
    for layer, lam in zip(layers, lambdas):
        pred = pred + (data.X @ layer.B) * layer.members[:, None]
        pen += lam * float(np.sum(np.abs(layer.B)))
    sse = float(np.sum((data.Y - pred) ** 2))
    return sse, 0.5 * sse + pen


def _fit_layer_B(X, z, P, lam, B0):
    # membership enters the model as a multiplier on the prediction, so the
    # lasso sees the row-scaled design diag(P) X against the raw residual z
    if not np.any(P):
        return np.zeros_like(B0)
    problem = StackedProblem(X=P[:, None] * X, Ystar=z, w=np.ones(len(z)),
                             lambda1=lam)
    return solve_separate_lasso(problem, B0=B0).B


def _search_layer(X, z, lam, config) -> tuple[np.ndarray, np.ndarray]:
    """One greedy layer: S relaxation rounds, tau pruning, member refit."""
    n, p = X.shape
    q = z.shape[1]
    P = np.ones(n)
    B = np.zeros((p, q))
    znorm = np.einsum("ij,ij->i", z, z)
    for s in range(1, config.S + 1):
        B = _fit_layer_B(X, z, P, lam, B)
        fitted = z - X @ B
        good = np.einsum("ij,ij->i", fitted, fitted) <= znorm
        delta = relax_delta(s, config.S, config.T)
        P = np.where(good, 0.5 + delta, 0.5 - delta)
    B = _fit_layer_B(X, z, P, lam, B)
    members = prune_members(X, z, B, config.tau)
    if np.any(members):
        B = _fit_layer_B(X, z, members, lam, B)
    return B, members


def _backfit_pass(data, layers, lambdas):
    """Refit each layer's coefficients on its frozen members, in place."""
    X = data.X
    for idx in range(len(layers)):
        B_idx, members_idx = layers[idx]
        pred_others = np.zeros_like(data.Y)
        for jdx, (B_j, members_j) in enumerate(layers):
            if jdx != idx:
                pred_others += (X @ B_j) * members_j[:, None]
        z = data.Y - pred_others
        layers[idx] = (_fit_layer_B(X, z, members_idx, lambdas[idx], B_idx),
                       members_idx)


def _as_layers(raw) -> tuple[PlaidLayer, ...]:
    return tuple(PlaidLayer(B=B, members=members) for B, members in raw)


def plaid_fit_sequential(data: Dataset, config: PlaidConfig) -> PlaidFit:
    """Greedy layer recruitment; stops when a candidate layer is empty.

    Each accepted layer is followed by R backfit passes over all layers
    found so far; backfitting refits coefficients on the frozen binary
    memberships and can only lower Q.
    """
    raw: list[tuple[np.ndarray, np.ndarray]] = []
    backfit_q: list[float] = []
    resid = np.array(data.Y)
    for k in range(config.K):
        lam = config.lambda1[k]
        B, members = _search_layer(data.X, resid, lam, config)
        if not np.any(members) or float(np.max(np.abs(B))) <= LAYER_COEF_TOL:
            break
        raw.append((B, members))
        lams = config.lambda1[: len(raw)]
        _, q_now = plaid_objective(data, _as_layers(raw), lams)
        backfit_q.append(q_now)
        for _ in range(config.R):
            _backfit_pass(data, raw, lams)
            _, q_new = plaid_objective(data, _as_layers(raw), lams)
            if q_new > q_now + PLAID_Q_SLACK * max(1.0, abs(q_now)):
                raise NumericalError(
                    f"backfit increased Q from {q_now:.6g} to {q_new:.6g}")
            q_now = q_new
            backfit_q.append(q_now)
        pred = np.zeros_like(data.Y)
        for B_l, members_l in raw:
            pred += (data.X @ B_l) * members_l[:, None]
        resid = data.Y - pred
    layers = _as_layers(raw)
    sse, q_value = plaid_objective(data, layers, config.lambda1[: len(layers)])
    return PlaidFit(layers=layers, residual_sse=sse, Q_value=q_value,
                    backfit_q=tuple(backfit_q))


def plaid_fit_joint(data: Dataset, config: PlaidConfig) -> PlaidFit:
    """Cyclic refinement of all K layers at once.

    Memberships start from a k-means split of the responses, relax to
    0.5 +/- delta(s) with the tau rule deciding the sign, and are exactly
    binary on the final round because delta saturates at 0.5.
    """
    X, Y = data.X, data.Y
    n, p, q = data.n, data.p, data.q
    labels = _kmeans_rows(Y, config.K, rng_stream(config.seed, 7))
    P = [(labels == k).astype(float) for k in range(config.K)]
    B = [np.zeros((p, q)) for _ in range(config.K)]
    for s in range(1, config.S + 1):
        delta = relax_delta(s, config.S, config.T)
        for k in range(config.K):
            pred_others = np.zeros_like(Y)
            for l in range(config.K):
                if l != k:
                    pred_others += (X @ B[l]) * P[l][:, None]
            z = Y - pred_others
            B[k] = _fit_layer_B(X, z, P[k], config.lambda1[k], B[k])
            fitted = z - X @ B[k]
            good = (np.einsum("ij,ij->i", fitted, fitted)
                    <= config.tau * np.einsum("ij,ij->i", z, z))
            P[k] = np.where(good, 0.5 + delta, 0.5 - delta)
    layers = _as_layers(zip(B, P))
    sse, q_value = plaid_objective(data, layers, config.lambda1)
    return PlaidFit(layers=layers, residual_sse=sse, Q_value=q_value)
