"""Desk-scale simulation studies: recovery, order selection, baselines.

Each study draws fresh instances per replication (base_seed + rep), fits one
engine, and scores hard memberships against the generating clusters. Tuning
is frozen: recovery F1 at n=450 is flat for lambda1 in [0.1, 0.8] on both
scenarios, so a fixed 0.2 is used throughout and no cross-validation runs
inside a study.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import Dataset, PenaltyConfig
from .em import EmConfig, fit_em
from .evaluate import score_fit
from .plaid import PLAID_Q_SLACK, PlaidConfig, plaid_fit_joint, plaid_fit_sequential
from .selection import IcConfig, select_K
from .simulate import SimSpec, simulate

STUDY_LAMBDA1 = 0.2
# order selection wants parsimony, not just recovery: coefficients are only
# zeroed once lambda reaches the sqrt(n log p) scale, and BIC cannot prefer
# the true K while every noise coefficient is billed as a parameter
BIC_LAMBDA1 = 12.0
STUDY_RESTARTS = 2
STUDY_K = 3


def study_config(K: int = STUDY_K, seed: int = 0, singleton_only: bool = False,
                 lambda1: float = STUDY_LAMBDA1) -> EmConfig:
    return EmConfig(K=K, penalty=PenaltyConfig.lasso(lambda1, K=K),
                    n_restarts=STUDY_RESTARTS, seed=seed,
                    singleton_only=singleton_only)


@dataclass(frozen=True)
class RecoveryRecord:
    seed: int
    f1: float
    specificity: float
    sensitivity: float
    converged: bool
    iterations: int
    seconds: float


@dataclass(frozen=True)
class RecoveryTable:
    label: str
    rows: tuple[RecoveryRecord, ...]

    def median_f1(self) -> float:
        return float(np.median([r.f1 for r in self.rows]))

    def median_specificity(self) -> float:
        return float(np.median([r.specificity for r in self.rows]))


def recovery_study(scenario: str, n: int, n_reps: int, K: int = STUDY_K,
                   singleton_only: bool = False, base_seed: int = 0,
                   label: str | None = None, p: int = 15,
                   q: int = 3) -> RecoveryTable:
    """Simulate, fit the mixture engine, and score, n_reps times."""
    rows = []
    for rep in range(n_reps):
        seed = base_seed + rep
        inst = simulate(SimSpec(n=n, p=p, q=q, scenario=scenario, seed=seed))
        t0 = time.monotonic()
        fit = fit_em(inst.data, study_config(K=K, seed=seed,
                                             singleton_only=singleton_only))
        elapsed = time.monotonic() - t0
        report = score_fit(inst.true_P, fit.hard)
        rows.append(RecoveryRecord(
            seed=seed, f1=report.mean_f1, specificity=report.mean_specificity,
            sensitivity=report.mean_sensitivity, converged=fit.converged,
            iterations=fit.iterations, seconds=elapsed))
    name = label or f"{scenario}-n{n}" + ("-singleton" if singleton_only else "")
    return RecoveryTable(label=name, rows=tuple(rows))


def single_response_study(scenario: str, n: int, n_reps: int,
                          base_seed: int = 0, p: int = 15,
                          q: int = 3) -> tuple[RecoveryTable, ...]:
    """Fit each response column alone on the same instances; one table each."""
    per_response: list[list[RecoveryRecord]] = []
    for rep in range(n_reps):
        seed = base_seed + rep
        inst = simulate(SimSpec(n=n, p=p, q=q, scenario=scenario, seed=seed))
        if not per_response:
            per_response = [[] for _ in range(inst.data.q)]
        for j in range(inst.data.q):
            sub = Dataset(X=inst.data.X, Y=inst.data.Y[:, [j]])
            t0 = time.monotonic()
            fit = fit_em(sub, study_config(seed=seed))
            elapsed = time.monotonic() - t0
            report = score_fit(inst.true_P, fit.hard)
            per_response[j].append(RecoveryRecord(
                seed=seed, f1=report.mean_f1,
                specificity=report.mean_specificity,
                sensitivity=report.mean_sensitivity, converged=fit.converged,
                iterations=fit.iterations, seconds=elapsed))
    return tuple(
        RecoveryTable(label=f"{scenario}-n{n}-response{j + 1}", rows=tuple(rows))
        for j, rows in enumerate(per_response))


@dataclass(frozen=True)
class BicRecord:
    seed: int
    chosen_K: int
    correct: bool
    seconds: float


@dataclass(frozen=True)
class BicTable:
    label: str
    true_K: int
    rows: tuple[BicRecord, ...]

    def accuracy(self) -> float:
        return float(np.mean([r.correct for r in self.rows]))


def bic_study(scenario: str, n: int, n_reps: int,
              candidates: tuple[int, ...] = (2, 3, 4), true_K: int = STUDY_K,
              base_seed: int = 0, lambda1: float = BIC_LAMBDA1,
              p: int = 15, q: int = 3) -> BicTable:
    """How often BIC picks the generating K over the candidate set."""
    ic = IcConfig(K_candidates=candidates, a_n_kind="bic")
    rows = []
    for rep in range(n_reps):
        seed = base_seed + rep
        inst = simulate(SimSpec(n=n, p=p, q=q, scenario=scenario, seed=seed))
        t0 = time.monotonic()
        report = select_K(inst.data,
                          study_config(K=max(candidates), seed=seed,
                                       lambda1=lambda1), ic)
        elapsed = time.monotonic() - t0
        rows.append(BicRecord(seed=seed, chosen_K=report.chosen_K,
                              correct=report.chosen_K == true_K,
                              seconds=elapsed))
    return BicTable(label=f"{scenario}-n{n}-bic", true_K=true_K, rows=tuple(rows))


def membership_from_layers(fit, n: int) -> np.ndarray:
    """Binary n x L membership matrix from plaid layers; one zero column if none."""
    if not fit.layers:
        return np.zeros((n, 1), dtype=int)
    return np.stack([layer.members for layer in fit.layers], axis=1).astype(int)


def backfit_monotone(backfit_q, R: int, slack: float = PLAID_Q_SLACK) -> bool:
    """True when Q never rises within any layer's backfit segment.

    The sequential trace holds 1 + R entries per accepted layer (value at
    acceptance, then after each backfit pass). Drops across segment borders
    are expected as new layers absorb residual.
    """
    step = R + 1
    vals = tuple(backfit_q)
    for start in range(0, len(vals), step):
        segment = vals[start:start + step]
        for a, b in zip(segment, segment[1:]):
            if b > a + slack * max(1.0, abs(a)):
                return False
    return True


@dataclass(frozen=True)
class PlaidRecord:
    seed: int
    f1: float
    specificity: float
    sensitivity: float
    n_layers: int
    monotone: bool
    seconds: float


@dataclass(frozen=True)
class PlaidTable:
    label: str
    rows: tuple[PlaidRecord, ...]

    def median_f1(self) -> float:
        return float(np.median([r.f1 for r in self.rows]))

    def all_monotone(self) -> bool:
        return all(r.monotone for r in self.rows)


def plaid_study(scenario: str, n: int, n_reps: int, variant: str = "sequential",
                K: int = STUDY_K, base_seed: int = 0,
                lambda1: float = STUDY_LAMBDA1, p: int = 15,
                q: int = 3) -> PlaidTable:
    """Score a plaid baseline's layers as retrieved clusters."""
    if variant == "sequential":
        fitter = plaid_fit_sequential
    elif variant == "joint":
        fitter = plaid_fit_joint
    else:
        raise ValueError(f"unknown plaid variant {variant!r}")
    rows = []
    for rep in range(n_reps):
        seed = base_seed + rep
        inst = simulate(SimSpec(n=n, p=p, q=q, scenario=scenario, seed=seed))
        config = PlaidConfig(K=K, lambda1=lambda1, seed=seed)
        t0 = time.monotonic()
        fit = fitter(inst.data, config)
        elapsed = time.monotonic() - t0
        report = score_fit(inst.true_P, membership_from_layers(fit, inst.data.n))
        rows.append(PlaidRecord(
            seed=seed, f1=report.mean_f1, specificity=report.mean_specificity,
            sensitivity=report.mean_sensitivity, n_layers=len(fit.layers),
            monotone=backfit_monotone(fit.backfit_q, config.R), seconds=elapsed))
    return PlaidTable(label=f"{scenario}-n{n}-plaid-{variant}", rows=tuple(rows))


def recovery_matrix(table: RecoveryTable) -> tuple[tuple[str, ...], np.ndarray]:
    """(header, numeric rows) for a flat CSV of one recovery table."""
    header = ("seed", "f1", "specificity", "sensitivity", "converged",
              "iterations", "seconds")
    rows = np.array([[r.seed, r.f1, r.specificity, r.sensitivity,
                      float(r.converged), r.iterations, r.seconds]
                     for r in table.rows], dtype=float)
    return header, rows
