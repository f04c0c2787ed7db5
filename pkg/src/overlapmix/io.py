"""File formats: CSV ingestion, flat config files, and JSON result bundles.

All numeric payloads serialize through ``repr``-style shortest decimal
strings, which parse back to the identical float; saving, loading, and
saving again produces byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .core import Dataset, ModelParams
from .em import FitResult, hard_assignments
from .errors import DataValidationError
from .patterns import enumerate_patterns
from .simulate import SimInstance, SimSpec, signal_mean
from .util import frozen

BUNDLE_SCHEMA = "overlapmix-bundle-v1"
PLAID_SCHEMA = "overlapmix-plaid-v1"
INSTANCE_SCHEMA = "overlapmix-instance-v1"
MISSING_TOKENS = {"", "na", "nan", "null"}


# ---------------------------------------------------------------- CSV input

@dataclass(frozen=True)
class IngestReport:
    """Parsed matrix plus what ingestion did to get it."""

    matrix: np.ndarray
    names: tuple[str, ...]
    imputed: tuple[tuple[int, str, float], ...] = ()  # (row, column name, value)
    dropped_rows: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "matrix", frozen(self.matrix))


def ingest_csv(path, role: str = "predictors", impute_missing: bool = False,
               min_observed_fraction: float | None = None) -> IngestReport:
    """Read a UTF-8, comma-delimited, header-first numeric matrix.

    Missing cells (empty, NA, NaN, null; case-insensitive) abort with their
    coordinates unless ``impute_missing`` replaces them by column means.
    ``min_observed_fraction`` first drops rows observed less often than the
    threshold.
    """
    if role not in ("predictors", "responses"):
        raise DataValidationError(f"unknown ingest role {role!r}")
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise DataValidationError(f"{role} file not found: {path}") from exc
    if not rows:
        raise DataValidationError(f"{role} file {path} is empty")
    names = tuple(cell.strip() for cell in rows[0])
    if not names or any(not n for n in names):
        raise DataValidationError(f"{role} file {path} needs a non-empty header row")
    body = rows[1:]
    if not body:
        raise DataValidationError(f"{role} file {path} has a header but no data rows")
    parsed = np.empty((len(body), len(names)))
    missing = np.zeros_like(parsed, dtype=bool)
    for r, row in enumerate(body):
        if len(row) != len(names):
            raise DataValidationError(
                f"{role} file {path}: row {r + 1} has {len(row)} cells, expected {len(names)}")
        for c, cell in enumerate(row):
            text = cell.strip()
            if text.lower() in MISSING_TOKENS:
                missing[r, c] = True
                parsed[r, c] = np.nan
                continue
            try:
                parsed[r, c] = float(text)
            except ValueError:
                raise DataValidationError(
                    f"{role} file {path}: non-numeric cell {text!r} at "
                    f"row {r + 1}, column {names[c]!r}") from None
            if not np.isfinite(parsed[r, c]):
                raise DataValidationError(
                    f"{role} file {path}: non-finite cell at row {r + 1}, "
                    f"column {names[c]!r}")
    dropped: tuple[int, ...] = ()
    if min_observed_fraction is not None:
        if not 0.0 <= min_observed_fraction <= 1.0:
            raise DataValidationError("min_observed_fraction must lie in [0, 1]")
        observed = 1.0 - missing.mean(axis=1)
        keep = observed >= min_observed_fraction
        dropped = tuple(int(r) + 1 for r in np.flatnonzero(~keep))
        parsed, missing = parsed[keep], missing[keep]
        if parsed.shape[0] == 0:
            raise DataValidationError(
                f"{role} file {path}: every row fell below observed fraction "
                f"{min_observed_fraction}")
    imputed: list[tuple[int, str, float]] = []
    if missing.any():
        if not impute_missing:
            r, c = map(int, np.argwhere(missing)[0])
            raise DataValidationError(
                f"{role} file {path}: missing value at row {r + 1}, column "
                f"{names[c]!r} (pass the impute flag to mean-fill)")
        for c in range(parsed.shape[1]):
            col_missing = missing[:, c]
            if not col_missing.any():
                continue
            if col_missing.all():
                raise DataValidationError(
                    f"{role} file {path}: column {names[c]!r} has no observed values")
            mean = float(parsed[~col_missing, c].mean())
            for r in np.flatnonzero(col_missing):
                parsed[int(r), c] = mean
                imputed.append((int(r) + 1, names[c], mean))
    return IngestReport(matrix=parsed, names=names, imputed=tuple(imputed),
                        dropped_rows=dropped)


def default_names(prefix: str, count: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{i + 1}" for i in range(count))


def write_matrix_csv(path, matrix: np.ndarray, names) -> None:
    """Header + repr-formatted rows; round-trips through ingest_csv bit-exactly."""
    matrix = np.asarray(matrix, dtype=float)
    names = tuple(names)
    if matrix.ndim != 2 or matrix.shape[1] != len(names):
        raise DataValidationError(
            f"matrix shape {matrix.shape} does not fit {len(names)} column names")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


# -------------------------------------------------------------- config file

def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; # comments and blank lines ignored."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataValidationError(f"config file not found: {path}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataValidationError(
                f"config {path} line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise DataValidationError(f"config {path} line {lineno}: empty key")
        if key in out:
            raise DataValidationError(f"config {path} line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


# ----------------------------------------------------------- canonical JSON

def canonical_json(obj) -> str:
    """Sorted keys, no whitespace, shortest-exact floats, trailing newline."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def save_json(obj, path) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")


def load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataValidationError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path} is not valid JSON: {exc}") from exc


# ------------------------------------------------------------ result bundle

@dataclass(frozen=True)
class ResultBundle:
    """Serializable record of one mixture fit."""

    seed: int
    config: dict
    pattern_labels: tuple[str, ...]
    B: tuple[np.ndarray, ...]
    pi: tuple[float, ...]
    Sigma: np.ndarray
    responsibilities: np.ndarray
    hard: np.ndarray
    row_patterns: tuple[str, ...]
    loglik_trace: tuple[float, ...]
    n_effective_params: int
    converged: bool
    iterations: int
    restart_index: int = 0
    x_names: tuple[str, ...] = ()
    y_names: tuple[str, ...] = ()
    version: str = __version__

    def __post_init__(self):
        object.__setattr__(self, "B", tuple(frozen(b) for b in self.B))
        object.__setattr__(self, "Sigma", frozen(self.Sigma))
        object.__setattr__(self, "responsibilities", frozen(self.responsibilities))
        object.__setattr__(self, "hard", frozen(self.hard, dtype=int))
        if len(self.pi) != len(self.pattern_labels):
            raise DataValidationError("pi and pattern labels disagree")

    @property
    def K(self) -> int:
        return len(self.B)

    @classmethod
    def from_fit(cls, fit: FitResult, config: dict, seed: int,
                 x_names=(), y_names=()) -> "ResultBundle":
        patterns = fit.params.patterns
        row_patterns = tuple(
            patterns[int(i)].label for i in np.argmax(fit.resp.z, axis=1))
        return cls(
            seed=int(seed),
            config=dict(config),
            pattern_labels=tuple(p.label for p in patterns),
            B=fit.params.B,
            pi=tuple(float(v) for v in fit.params.pi_vector()),
            Sigma=fit.params.Sigma,
            responsibilities=fit.resp.z,
            hard=fit.hard,
            row_patterns=row_patterns,
            loglik_trace=fit.loglik_trace,
            n_effective_params=fit.n_effective_params,
            converged=fit.converged,
            iterations=fit.iterations,
            restart_index=fit.restart_index,
            x_names=tuple(x_names),
            y_names=tuple(y_names),
        )

    def to_params(self) -> ModelParams:
        patterns = enumerate_patterns(self.K)
        if tuple(p.label for p in patterns) != self.pattern_labels:
            raise DataValidationError("bundle pattern labels are not canonical")
        pi = {p: float(v) for p, v in zip(patterns, self.pi)}
        return ModelParams(B=self.B, Sigma=self.Sigma, pi=pi)


def bundle_to_dict(bundle: ResultBundle) -> dict:
    return {
        "schema": BUNDLE_SCHEMA,
        "version": bundle.version,
        "seed": bundle.seed,
        "config": bundle.config,
        "pattern_labels": list(bundle.pattern_labels),
        "B": [b.tolist() for b in bundle.B],
        "pi": list(bundle.pi),
        "Sigma": bundle.Sigma.tolist(),
        "responsibilities": bundle.responsibilities.tolist(),
        "hard": bundle.hard.tolist(),
        "row_patterns": list(bundle.row_patterns),
        "loglik_trace": list(bundle.loglik_trace),
        "n_effective_params": bundle.n_effective_params,
        "converged": bundle.converged,
        "iterations": bundle.iterations,
        "restart_index": bundle.restart_index,
        "x_names": list(bundle.x_names),
        "y_names": list(bundle.y_names),
    }


def save_bundle(bundle: ResultBundle, path) -> None:
    save_json(bundle_to_dict(bundle), path)


def load_bundle(path) -> ResultBundle:
    doc = load_json(path)
    if not isinstance(doc, dict) or doc.get("schema") != BUNDLE_SCHEMA:
        raise DataValidationError(f"{path} is not a {BUNDLE_SCHEMA} document")
    return bundle_from_dict(doc)


def bundle_from_dict(doc: dict) -> ResultBundle:
    return ResultBundle(
        seed=int(doc["seed"]),
        config=dict(doc["config"]),
        pattern_labels=tuple(doc["pattern_labels"]),
        B=tuple(np.array(b, dtype=float) for b in doc["B"]),
        pi=tuple(float(v) for v in doc["pi"]),
        Sigma=np.array(doc["Sigma"], dtype=float),
        responsibilities=np.array(doc["responsibilities"], dtype=float),
        hard=np.array(doc["hard"], dtype=int),
        row_patterns=tuple(doc["row_patterns"]),
        loglik_trace=tuple(float(v) for v in doc["loglik_trace"]),
        n_effective_params=int(doc["n_effective_params"]),
        converged=bool(doc["converged"]),
        iterations=int(doc["iterations"]),
        restart_index=int(doc["restart_index"]),
        x_names=tuple(doc["x_names"]),
        y_names=tuple(doc["y_names"]),
        version=str(doc["version"]),
    )


# --------------------------------------------------------- plaid fit bundle

def plaid_to_dict(fit, config: dict, seed: int) -> dict:
    return {
        "schema": PLAID_SCHEMA,
        "version": __version__,
        "seed": int(seed),
        "config": dict(config),
        "layers": [
            {"B": layer.B.tolist(), "members": [int(v) for v in layer.members]}
            for layer in fit.layers
        ],
        "residual_sse": fit.residual_sse,
        "Q_value": fit.Q_value,
        "backfit_q": list(fit.backfit_q),
    }


# --------------------------------------------------- simulation persistence

def save_sim_instance(inst: SimInstance, out_dir) -> dict[str, Path]:
    """X.csv / Y.csv plus instance.json; enough to rebuild the instance."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "X": out_dir / "X.csv",
        "Y": out_dir / "Y.csv",
        "instance": out_dir / "instance.json",
    }
    x_names = inst.data.x_names or default_names("x", inst.data.p)
    y_names = inst.data.y_names or default_names("y", inst.data.q)
    write_matrix_csv(paths["X"], inst.data.X, x_names)
    write_matrix_csv(paths["Y"], inst.data.Y, y_names)
    spec = inst.spec
    doc = {
        "schema": INSTANCE_SCHEMA,
        "version": __version__,
        "spec": {
            "n": spec.n, "p": spec.p, "q": spec.q, "K": spec.K,
            "rho_x": spec.rho_x, "rho_e": spec.rho_e,
            "p1": spec.p1, "p2": spec.p2,
            "scenario": spec.scenario,
            "fractions": list(spec.fractions),
            "seed": spec.seed,
        },
        "true_B": [b.tolist() for b in inst.true_B],
        "true_P": inst.true_P.tolist(),
        "row_patterns": [p.label for p in inst.true_pattern],
    }
    save_json(doc, paths["instance"])
    return paths


def load_sim_instance(out_dir) -> SimInstance:
    """Rebuild the saved instance; the noise array is recomputed bit-exactly."""
    out_dir = Path(out_dir)
    doc = load_json(out_dir / "instance.json")
    if not isinstance(doc, dict) or doc.get("schema") != INSTANCE_SCHEMA:
        raise DataValidationError(f"{out_dir}/instance.json is not a {INSTANCE_SCHEMA} document")
    spec = SimSpec(
        n=int(doc["spec"]["n"]), p=int(doc["spec"]["p"]), q=int(doc["spec"]["q"]),
        K=int(doc["spec"]["K"]), rho_x=float(doc["spec"]["rho_x"]),
        rho_e=float(doc["spec"]["rho_e"]), p1=float(doc["spec"]["p1"]),
        p2=float(doc["spec"]["p2"]), scenario=str(doc["spec"]["scenario"]),
        fractions=tuple(doc["spec"]["fractions"]), seed=int(doc["spec"]["seed"]),
    )
    X = ingest_csv(out_dir / "X.csv", role="predictors")
    Y = ingest_csv(out_dir / "Y.csv", role="responses")
    true_B = tuple(np.array(b, dtype=float) for b in doc["true_B"])
    true_P = np.array(doc["true_P"], dtype=int)
    patterns = enumerate_patterns(spec.K)
    by_label = {p.label: p for p in patterns}
    try:
        row_patterns = tuple(by_label[lab] for lab in doc["row_patterns"])
    except KeyError as exc:
        raise DataValidationError(f"unknown pattern label in instance.json: {exc}") from exc
    data = Dataset(X=X.matrix, Y=Y.matrix, x_names=X.names, y_names=Y.names)
    noise = data.Y - signal_mean(data.X, true_B, true_P)
    return SimInstance(data=data, true_B=true_B, true_P=true_P,
                       true_pattern=row_patterns, noise=noise, spec=spec)
