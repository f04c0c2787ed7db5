"""Three-step grouped analysis of a multi-response dataset.

Step 1 fits every response column on its own (q=1 mixtures). Step 2 groups
the responses twice with affinity propagation: first on flattened
responsibility matrices (which rows cluster together), then within each
group on flattened coefficient stacks (how they respond). Step 3 refits
each final group jointly, so responses in a group share patterns and a
response covariance.

Step-1 fits are cached content-addressed by (data, config, version); a
repeated run reuses the artifacts instead of refitting. Flattened vectors
align columns by the canonical pattern order, not by matching cluster
labels across fits; a fit whose clusters come out permuted produces a
permuted vector, which the similarity treats as genuinely different.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .affinity import affinity_propagation, similarity_from_rows
from .core import Dataset
from .em import EmConfig, fit_em
from .errors import (
    ConvergenceError,
    DataValidationError,
    EmptyComponentError,
    NumericalError,
    OverlapmixError,
    SizeLimitError,
    UsageError,
)
from .io import (
    ResultBundle,
    bundle_from_dict,
    bundle_to_dict,
    canonical_json,
    default_names,
    load_json,
    save_json,
)
from .util import default_workers, parallel_map, quartile_summary

GROUPS_SCHEMA = "overlapmix-groups-v1"

_ERROR_CLASSES = {cls.__name__: cls for cls in (
    UsageError, DataValidationError, SizeLimitError, NumericalError,
    ConvergenceError, EmptyComponentError)}


def em_config_dict(config: EmConfig) -> dict:
    """Flat, JSON-ready echo of an EM configuration."""
    return {
        "K": config.K,
        "penalty_kind": config.penalty.kind,
        "lambda1": list(config.penalty.lambda1),
        "lambda2": list(config.penalty.lambda2),
        "unpenalized_cols": sorted(config.penalty.unpenalized_cols),
        "rel_tol": config.rel_tol,
        "max_iter": config.max_iter,
        "prune_threshold": config.prune_threshold,
        "n_restarts": config.n_restarts,
        "coupled": config.coupled,
        "seed": config.seed,
        "sigma_jitter": config.sigma_jitter,
        "singleton_only": config.singleton_only,
    }


def fit_cache_key(X: np.ndarray, Y: np.ndarray, y_names, config: EmConfig) -> str:
    """Content hash identifying one fit: inputs + config + library version."""
    payload = canonical_json({
        "X": hashlib.sha256(np.ascontiguousarray(X).tobytes()).hexdigest(),
        "Y": hashlib.sha256(np.ascontiguousarray(Y).tobytes()).hexdigest(),
        "y_names": list(y_names),
        "config": em_config_dict(config),
        "version": __version__,
    })
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _fit_one_response(task):
    """Worker: fit one response column; errors come back as data, not raises."""
    X, y, name, config = task
    try:
        fit = fit_em(Dataset(X=X, Y=y, y_names=(name,)), config)
    except OverlapmixError as exc:
        return name, ("error", type(exc).__name__, str(exc))
    bundle = ResultBundle.from_fit(fit, em_config_dict(config), config.seed,
                                   y_names=(name,))
    return name, ("ok", bundle_to_dict(bundle))


def _raise_step_failures(step: int, failures: list[tuple[str, str, str]]):
    names = ", ".join(name for name, _, _ in failures)
    first_kind, first_msg = failures[0][1], failures[0][2]
    cls = _ERROR_CLASSES.get(first_kind, OverlapmixError)
    raise cls(f"pipeline step {step} failed for responses [{names}]: {first_msg}")


def step1_fit_responses(data: Dataset, config: EmConfig, out_dir,
                        workers: int | None = None) -> tuple[ResultBundle, ...]:
    """Per-response q=1 fits, content-addressed under out_dir/step1."""
    y_names = data.y_names or default_names("y", data.q)
    step_dir = Path(out_dir) / "step1"
    step_dir.mkdir(parents=True, exist_ok=True)
    paths, todo = {}, []
    for j, name in enumerate(y_names):
        y = data.Y[:, [j]]
        key = fit_cache_key(data.X, y, (name,), config)
        paths[name] = step_dir / f"{name}-{key}.json"
        if not paths[name].exists():
            todo.append((data.X, y, name, config))
    results = parallel_map(_fit_one_response, todo,
                           workers=default_workers() if workers is None else workers)
    failures = [(name, out[1], out[2]) for name, out in results if out[0] == "error"]
    if failures:
        _raise_step_failures(1, failures)
    for name, out in results:
        save_json(out[1], paths[name])
    return tuple(bundle_from_dict(load_json(paths[name])) for name in y_names)


@dataclass(frozen=True)
class PipelineGroups:
    """Response-index groups from the two grouping levels."""

    level1: tuple[tuple[int, ...], ...]
    level2: tuple[tuple[int, ...], ...]
    response_names: tuple[str, ...]

    def level2_names(self) -> tuple[tuple[str, ...], ...]:
        return tuple(tuple(self.response_names[i] for i in g) for g in self.level2)


def _apc_groups(rows: np.ndarray, damping: float) -> list[list[int]]:
    """Partition row indices by affinity propagation; singletons pass through.

    Exact-duplicate rows are collapsed first: zero-distance points must land
    in the same group, and feeding them to message passing only sets up
    symmetric stalemates.
    """
    uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
    if len(uniq) == 1:
        return [list(range(len(rows)))]
    if len(uniq) == len(rows):
        result = affinity_propagation(similarity_from_rows(rows), damping=damping)
        return [sorted(members) for _, members in sorted(result.groups().items())]
    result = affinity_propagation(similarity_from_rows(uniq), damping=damping)
    expanded = [sorted(i for i in range(len(rows)) if inverse[i] in set(members))
                for _, members in sorted(result.groups().items())]
    return sorted(expanded, key=lambda g: g[0])


def group_responses(bundles, response_names, damping: float = 0.9) -> PipelineGroups:
    """Level 1 on flattened responsibilities, level 2 on flattened coefficients."""
    if len(bundles) != len(response_names):
        raise DataValidationError("one bundle per response required")
    z_rows = np.vstack([b.responsibilities.ravel() for b in bundles])
    level1 = [[int(i) for i in g] for g in _apc_groups(z_rows, damping)]
    level2: list[list[int]] = []
    for group in level1:
        if len(group) == 1:
            level2.append(group)
            continue
        b_rows = np.vstack([
            np.concatenate([bk.ravel() for bk in bundles[i].B]) for i in group])
        for sub in _apc_groups(b_rows, damping):
            level2.append([group[i] for i in sub])
    return PipelineGroups(
        level1=tuple(tuple(g) for g in level1),
        level2=tuple(tuple(sorted(g)) for g in level2),
        response_names=tuple(response_names),
    )


def _fit_one_group(task):
    X, Ycols, names, config = task
    try:
        fit = fit_em(Dataset(X=X, Y=Ycols, y_names=names), config)
    except OverlapmixError as exc:
        return names, ("error", type(exc).__name__, str(exc))
    bundle = ResultBundle.from_fit(fit, em_config_dict(config), config.seed,
                                   y_names=names)
    return names, ("ok", bundle_to_dict(bundle))


def step3_fit_groups(data: Dataset, groups: PipelineGroups, config: EmConfig,
                     out_dir, workers: int | None = None) -> tuple[ResultBundle, ...]:
    """Joint fit per level-2 group, content-addressed under out_dir/step3."""
    step_dir = Path(out_dir) / "step3"
    step_dir.mkdir(parents=True, exist_ok=True)
    paths, todo = [], []
    for g, group in enumerate(groups.level2):
        names = tuple(groups.response_names[i] for i in group)
        Ycols = data.Y[:, list(group)]
        key = fit_cache_key(data.X, Ycols, names, config)
        path = step_dir / f"group{g + 1}-{key}.json"
        paths.append(path)
        if not path.exists():
            todo.append((data.X, Ycols, names, config))
    results = parallel_map(_fit_one_group, todo,
                           workers=default_workers() if workers is None else workers)
    failures = [(", ".join(names), out[1], out[2])
                for names, out in results if out[0] == "error"]
    if failures:
        _raise_step_failures(3, failures)
    by_names = {names: out[1] for names, out in results}
    out = []
    for g, group in enumerate(groups.level2):
        names = tuple(groups.response_names[i] for i in group)
        if names in by_names:
            save_json(by_names[names], paths[g])
        out.append(bundle_from_dict(load_json(paths[g])))
    return tuple(out)


@dataclass(frozen=True)
class PipelineResult:
    step1: tuple[ResultBundle, ...]
    groups: PipelineGroups
    step3: tuple[ResultBundle, ...]


def run_pipeline(data: Dataset, config: EmConfig, out_dir,
                 damping: float = 0.9, workers: int | None = None) -> PipelineResult:
    """All three steps; artifacts land under out_dir, groups in groups.json."""
    out_dir = Path(out_dir)
    step1 = step1_fit_responses(data, config, out_dir, workers=workers)
    y_names = data.y_names or default_names("y", data.q)
    try:
        groups = group_responses(step1, y_names, damping=damping)
    except OverlapmixError as exc:
        raise type(exc)(f"pipeline step 2 failed: {exc}") from exc
    save_json({
        "schema": GROUPS_SCHEMA,
        "version": __version__,
        "response_names": list(y_names),
        "level1": [list(g) for g in groups.level1],
        "level2": [list(g) for g in groups.level2],
    }, out_dir / "groups.json")
    step3 = step3_fit_groups(data, groups, config, out_dir, workers=workers)
    return PipelineResult(step1=step1, groups=groups, step3=step3)


# ------------------------------------------------------------ cross predict

@dataclass(frozen=True)
class CrossPrediction:
    rows: tuple[int, ...]
    predictions: np.ndarray
    quartiles: tuple[dict, ...]
    response_names: tuple[str, ...]


def _cluster_rows(bundle: ResultBundle, cluster) -> np.ndarray:
    if isinstance(cluster, (int, np.integer)):
        k = int(cluster)
        if not 1 <= k <= bundle.K:
            raise DataValidationError(f"objective cluster {k} outside 1..{bundle.K}")
        return np.flatnonzero(bundle.hard[:, k - 1] == 1)
    label = str(cluster)
    if label not in bundle.pattern_labels:
        raise DataValidationError(f"unknown pattern label {label!r}")
    return np.flatnonzero(np.array(bundle.row_patterns) == label)


def _resolve_coeff(choice):
    if isinstance(choice, np.ndarray):
        return np.asarray(choice, dtype=float)
    ref, k = choice
    if not 1 <= int(k) <= ref.K:
        raise DataValidationError(f"coefficient reference {k} outside 1..{ref.K}")
    return ref.B[int(k) - 1]


def cross_predict(bundle: ResultBundle, cluster, coeff_choice, data: Dataset) -> CrossPrediction:
    """Predict the chosen cluster's rows with a sum of coefficient matrices.

    cluster: 1-based objective index (rows whose hard membership includes it)
    or a pattern label (rows assigned exactly that pattern). coeff_choice:
    (bundle, component) pairs and/or raw p x q matrices; their sum is the
    coefficient used.
    """
    if data.n != bundle.hard.shape[0]:
        raise DataValidationError(
            f"data has {data.n} rows but the bundle fitted {bundle.hard.shape[0]}")
    rows = _cluster_rows(bundle, cluster)
    if rows.size == 0:
        raise DataValidationError(f"cluster {cluster!r} has no assigned rows")
    mats = [_resolve_coeff(c) for c in coeff_choice]
    if not mats:
        raise DataValidationError("coeff_choice must name at least one coefficient matrix")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise DataValidationError(
            f"coefficient shapes disagree: {sorted({m.shape for m in mats})}")
    if shape[0] != data.p:
        raise DataValidationError(
            f"coefficients expect p={shape[0]} predictors, data has {data.p}")
    total = np.zeros(shape)
    for m in mats:
        total += m
    preds = data.X[rows] @ total
    names = data.y_names or default_names("y", shape[1])
    if len(names) != shape[1]:
        names = default_names("y", shape[1])
    quartiles = tuple(quartile_summary(preds[:, j]) for j in range(preds.shape[1]))
    return CrossPrediction(rows=tuple(int(r) for r in rows), predictions=preds,
                           quartiles=quartiles, response_names=tuple(names))
