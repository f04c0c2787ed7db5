"""Cluster-recovery scoring: per-pair quality, optimal matching, coefficient SSE.

Naming note: this module follows the convention where "specificity" is the
share of the target cluster that was retrieved (usually called recall) and
"sensitivity" is the share of the retrieved cluster that is correct (usually
precision). F1 is their harmonic mean either way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataValidationError


@dataclass(frozen=True)
class ClusterSet:
    """A sequence of observation-index sets, one per cluster; overlap allowed."""

    clusters: tuple[frozenset[int], ...]

    def __post_init__(self):
        sets = []
        for c in self.clusters:
            s = frozenset(int(i) for i in c)
            if any(i < 0 for i in s):
                raise DataValidationError("cluster indices must be >= 0")
            sets.append(s)
        object.__setattr__(self, "clusters", tuple(sets))

    def __len__(self) -> int:
        return len(self.clusters)

    def __getitem__(self, i: int) -> frozenset[int]:
        return self.clusters[i]

    @classmethod
    def from_membership(cls, P) -> "ClusterSet":
        """Columns of a binary n x K matrix become clusters."""
        P = np.asarray(P)
        return cls(clusters=tuple(
            frozenset(np.flatnonzero(P[:, k]).tolist()) for k in range(P.shape[1])
        ))


@dataclass(frozen=True)
class PairQuality:
    """One matched pair; None marks a padding (null) cluster on that side."""

    retrieved: int | None
    target: int | None
    specificity: float
    sensitivity: float
    f1: float


@dataclass(frozen=True)
class MatchReport:
    pairing: dict[int, int | None]
    per_pair: tuple[PairQuality, ...]
    mean_specificity: float
    mean_sensitivity: float
    mean_f1: float
    coefficient_sse: float | None = None

    def __post_init__(self):
        targets = [t for t in self.pairing.values() if t is not None]
        if len(targets) != len(set(targets)):
            raise DataValidationError("pairing must be injective on non-null entries")
        for name in ("mean_specificity", "mean_sensitivity", "mean_f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataValidationError(f"{name}={v} outside [0, 1]")


def quality(target, retrieved) -> tuple[float, float, float]:
    """(specificity, sensitivity, f1) of one retrieved set against one target.

    specificity = |A n Ahat| / |A|, sensitivity = |A n Ahat| / |Ahat|,
    f1 = 2 |A n Ahat| / (|A| + |Ahat|). Empty denominators score 0, except
    that two empty sets count as a perfect retrieval (1, 1, 1).
    """
    A = frozenset(target)
    Ahat = frozenset(retrieved)
    if not A and not Ahat:
        return (1.0, 1.0, 1.0)
    inter = len(A & Ahat)
    spec = inter / len(A) if A else 0.0
    sens = inter / len(Ahat) if Ahat else 0.0
    f1 = 2.0 * inter / (len(A) + len(Ahat))
    return (spec, sens, f1)


def match_clusters(target: ClusterSet, retrieved: ClusterSet) -> MatchReport:
    """Pad the shorter side with null clusters, then pair one-to-one for max total F1.

    The assignment is solved exactly (rectangular Hungarian method), so the
    reported pairing is optimal for every cluster count. Null pairs score
    (0, 0, 0) unless both members are empty.
    """
    if len(target) == 0:
        raise DataValidationError("target must contain at least one cluster")
    kt, kr = len(target), len(retrieved)
    L = max(kt, kr)
    t_sets = [target[i] if i < kt else frozenset() for i in range(L)]
    r_sets = [retrieved[i] if i < kr else frozenset() for i in range(L)]
    f1 = np.zeros((L, L))
    for r in range(L):
        for t in range(L):
            f1[r, t] = quality(t_sets[t], r_sets[r])[2]
    rows, cols = linear_sum_assignment(-f1)
    assigned = dict(zip(rows.tolist(), cols.tolist()))
    pairs = []
    for r in range(L):
        t = assigned[r]
        spec, sens, f = quality(t_sets[t], r_sets[r])
        pairs.append(PairQuality(
            retrieved=r if r < kr else None,
            target=t if t < kt else None,
            specificity=spec, sensitivity=sens, f1=f,
        ))
    pairing = {p.retrieved: p.target for p in pairs if p.retrieved is not None}
    return MatchReport(
        pairing=pairing,
        per_pair=tuple(pairs),
        mean_specificity=float(np.mean([p.specificity for p in pairs])),
        mean_sensitivity=float(np.mean([p.sensitivity for p in pairs])),
        mean_f1=float(np.mean([p.f1 for p in pairs])),
    )


def coefficient_sse(true_B, est_B, pairing: dict[int, int | None]) -> float:
    """Total squared Frobenius error under a retrieved->target pairing.

    Paired clusters contribute ||est - true||_F^2; targets left unpaired
    contribute ||true||_F^2 (their signal was missed entirely).
    """
    true_B = [np.asarray(b, dtype=float) for b in true_B]
    est_B = [np.asarray(b, dtype=float) for b in est_B]
    total = 0.0
    matched_targets = set()
    for r, t in pairing.items():
        if t is None:
            continue
        if not 0 <= r < len(est_B) or not 0 <= t < len(true_B):
            raise DataValidationError(f"pairing entry {r}->{t} out of range")
        if est_B[r].shape != true_B[t].shape:
            raise DataValidationError("coefficient shapes disagree")
        matched_targets.add(t)
        total += float(np.sum((est_B[r] - true_B[t]) ** 2))
    for t, B in enumerate(true_B):
        if t not in matched_targets:
            total += float(np.sum(B ** 2))
    return total


def score_fit(true_P, est_P, true_B=None, est_B=None) -> MatchReport:
    """Match membership matrices and, when coefficients are given, attach SSE."""
    report = match_clusters(ClusterSet.from_membership(true_P),
                            ClusterSet.from_membership(est_P))
    if true_B is not None and est_B is not None:
        sse = coefficient_sse(true_B, est_B, report.pairing)
        report = MatchReport(
            pairing=report.pairing, per_pair=report.per_pair,
            mean_specificity=report.mean_specificity,
            mean_sensitivity=report.mean_sensitivity,
            mean_f1=report.mean_f1, coefficient_sse=sse,
        )
    return report
