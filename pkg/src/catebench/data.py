"""Covariate tables, simulation draws and train/test splits."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .seeding import rng_from


class CovariateError(ValueError):
    """Raised when a covariate table violates its declared column kinds."""


class SplitError(ValueError):
    pass


class ColumnKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"
    COUNT = "count"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _check_column(values: np.ndarray, kind: ColumnKind, name: str, row_offset: int = 0) -> None:
    if kind is ColumnKind.BINARY:
        bad = np.flatnonzero((values != 0) & (values != 1))
        if bad.size:
            r = int(bad[0])
            raise CovariateError(
                f"row {r + row_offset}, column {name!r}: value {values[r]!r} is not in {{0, 1}}"
            )
    elif kind is ColumnKind.COUNT:
        bad = np.flatnonzero((values < 0) | (values != np.floor(values)))
        if bad.size:
            r = int(bad[0])
            raise CovariateError(
                f"row {r + row_offset}, column {name!r}: value {values[r]!r} is not a non-negative integer"
            )


@dataclass(frozen=True)
class CovariateMatrix:
    """An ``n x d`` covariate table with per-column kind metadata."""

    values: np.ndarray
    column_kinds: tuple[ColumnKind, ...]
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise CovariateError(f"covariates must be a non-empty 2-d table, got shape {values.shape}")
        kinds = tuple(ColumnKind(k) for k in self.column_kinds)
        names = tuple(self.column_names) or tuple(f"x{j}" for j in range(values.shape[1]))
        if len(kinds) != values.shape[1] or len(names) != values.shape[1]:
            raise CovariateError(
                f"{values.shape[1]} columns but {len(kinds)} kinds and {len(names)} names"
            )
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise CovariateError(f"row {r}, column {names[c]!r}: missing or non-finite value")
        for j, (kind, name) in enumerate(zip(kinds, names)):
            _check_column(values[:, j], kind, name)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "column_kinds", kinds)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def columns_of(self, kind: ColumnKind) -> list[int]:
        return [j for j, k in enumerate(self.column_kinds) if k is kind]

    def take(self, rows) -> "CovariateMatrix":
        return CovariateMatrix(self.values[rows], self.column_kinds, self.column_names)


# --------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class HoldoutFraction:
    fraction: float


@dataclass(frozen=True)
class FixedPrefix:
    n_train: int


@dataclass(frozen=True)
class ExplicitIndices:
    train: Sequence[int]
    test: Sequence[int]


SplitPolicy = HoldoutFraction | FixedPrefix | ExplicitIndices


@dataclass(frozen=True)
class TrainTestSplit:
    train_indices: np.ndarray
    test_indices: np.ndarray
    n: int

    def __post_init__(self):
        train = _frozen(np.asarray(self.train_indices, dtype=np.int64))
        test = _frozen(np.asarray(self.test_indices, dtype=np.int64))
        if train.size == 0 or test.size == 0:
            raise SplitError(f"degenerate split: {train.size} train / {test.size} test units")
        both = np.concatenate([train, test])
        if both.min() < 0 or both.max() >= self.n:
            raise SplitError(f"split indices out of range [0, {self.n})")
        if np.unique(both).size != both.size:
            raise SplitError("train and test indices overlap or repeat")
        object.__setattr__(self, "train_indices", train)
        object.__setattr__(self, "test_indices", test)


def make_split(n: int, policy: SplitPolicy, seed: int | None = None) -> TrainTestSplit:
    """Partition ``range(n)`` into train and test indices.

    ``HoldoutFraction`` puts ``round(f * n)`` units in the test set: the last
    ones when ``seed`` is None, otherwise a seeded random subset (kept sorted).
    ``FixedPrefix(k)`` trains on the first ``k`` units.
    """
    if isinstance(policy, HoldoutFraction):
        if not 0.0 < policy.fraction < 1.0:
            raise SplitError(f"holdout fraction must lie in (0, 1), got {policy.fraction}")
        n_test = int(round(policy.fraction * n))
        if seed is None:
            order = np.arange(n)
        else:
            order = rng_from(seed).permutation(n)
        test = np.sort(order[n - n_test:])
        train = np.sort(order[: n - n_test])
        return TrainTestSplit(train, test, n)
    if isinstance(policy, FixedPrefix):
        return TrainTestSplit(np.arange(policy.n_train), np.arange(policy.n_train, n), n)
    if isinstance(policy, ExplicitIndices):
        return TrainTestSplit(np.asarray(policy.train), np.asarray(policy.test), n)
    raise TypeError(f"unknown split policy {policy!r}")


# --------------------------------------------------------------------------
# Simulation draws


@dataclass(frozen=True)
class SimulationDraw:
    """One realization of a data-generating process.

    ``covariates`` is what estimators see by default.  ``design`` is the
    matrix the response surfaces were evaluated on, when it differs (the
    dichotomized inputs of the knobbed DGP).
    """

    covariates: CovariateMatrix
    treatment: np.ndarray
    outcome: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    propensity: np.ndarray
    split: TrainTestSplit
    draw_seed: int
    tau: np.ndarray = None
    design: CovariateMatrix | None = None
    diagnostics: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        n = self.covariates.n
        w = np.asarray(self.treatment)
        if w.shape != (n,) or not np.all((w == 0) | (w == 1)):
            raise ValueError("treatment must be a length-n 0/1 vector")
        arrays = {}
        for name in ("outcome", "mu0", "mu1", "propensity"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (n,):
                raise ValueError(f"{name} has shape {a.shape}, expected ({n},)")
            arrays[name] = a
        tau = arrays["mu1"] - arrays["mu0"]
        if self.tau is not None and not np.array_equal(np.asarray(self.tau, dtype=float), tau):
            raise ValueError("tau must equal mu1 - mu0 exactly")
        e = arrays["propensity"]
        if np.any(e <= 0) or np.any(e >= 1):
            raise ValueError("propensity scores must lie strictly inside (0, 1)")
        if self.split.n != n:
            raise ValueError("split does not match the number of units")
        object.__setattr__(self, "treatment", _frozen(w.astype(np.int64)))
        for name, a in arrays.items():
            object.__setattr__(self, name, _frozen(a))
        object.__setattr__(self, "tau", _frozen(tau))
        object.__setattr__(self, "diagnostics", dict(self.diagnostics))

    @property
    def n(self) -> int:
        return self.covariates.n

    @property
    def train(self) -> np.ndarray:
        return self.split.train_indices

    @property
    def test(self) -> np.ndarray:
        return self.split.test_indices


# --------------------------------------------------------------------------
# Synthetic covariates


@dataclass(frozen=True)
class ColumnSpec:
    """Sampling recipe for one column.

    continuous: Normal(loc, scale); binary: Bernoulli(p); count: Poisson(lam).
    """

    kind: ColumnKind
    loc: float = 0.0
    scale: float = 1.0
    p: float = 0.5
    lam: float = 1.0
    name: str = ""


@dataclass(frozen=True)
class CovariateProfile:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        if not self.columns:
            raise CovariateError("profile has no columns")
        for j, c in enumerate(self.columns):
            kind = ColumnKind(c.kind)
            if kind is ColumnKind.BINARY and not 0.0 < c.p < 1.0:
                raise CovariateError(f"column {j}: Bernoulli probability {c.p} outside (0, 1)")
            if kind is ColumnKind.COUNT and not c.lam > 0:
                raise CovariateError(f"column {j}: Poisson rate {c.lam} must be positive")
            if kind is ColumnKind.CONTINUOUS and not c.scale > 0:
                raise CovariateError(f"column {j}: scale {c.scale} must be positive")

    @property
    def d(self) -> int:
        return len(self.columns)


def synthesize_covariates(n: int, profile: CovariateProfile, seed: int) -> CovariateMatrix:
    if n < 1:
        raise CovariateError(f"n must be >= 1, got {n}")
    rng = rng_from(seed)
    out = np.empty((n, profile.d))
    for j, c in enumerate(profile.columns):
        kind = ColumnKind(c.kind)
        if kind is ColumnKind.CONTINUOUS:
            out[:, j] = rng.normal(c.loc, c.scale, size=n)
        elif kind is ColumnKind.BINARY:
            out[:, j] = rng.random(n) < c.p
        else:
            out[:, j] = rng.poisson(c.lam, size=n)
    names = tuple(c.name or f"x{j}" for j, c in enumerate(profile.columns))
    return CovariateMatrix(out, tuple(ColumnKind(c.kind) for c in profile.columns), names)


# Fixed once so the profile is the same object in every process.
_PROFILE_SEED = 20210701


def ihdp_like_profile() -> CovariateProfile:
    """6 standard-normal columns followed by 19 Bernoulli columns."""
    probs = np.random.default_rng(_PROFILE_SEED).uniform(0.1, 0.9, size=19)
    cols = [ColumnSpec(ColumnKind.CONTINUOUS, name=f"x{j}") for j in range(6)]
    cols += [ColumnSpec(ColumnKind.BINARY, p=float(p), name=f"x{6 + j}") for j, p in enumerate(probs)]
    return CovariateProfile(tuple(cols))


def acic_like_profile() -> CovariateProfile:
    """58 columns: 27 Poisson counts, 20 standard normals, 11 Bernoullis."""
    rng = np.random.default_rng(_PROFILE_SEED + 1)
    lams = rng.uniform(0.5, 8.0, size=27)
    probs = rng.uniform(0.1, 0.9, size=11)
    cols = [ColumnSpec(ColumnKind.COUNT, lam=float(l), name=f"c{j}") for j, l in enumerate(lams)]
    cols += [ColumnSpec(ColumnKind.CONTINUOUS, name=f"z{j}") for j in range(20)]
    cols += [ColumnSpec(ColumnKind.BINARY, p=float(p), name=f"b{j}") for j, p in enumerate(probs)]
    return CovariateProfile(tuple(cols))


IHDP_TREATED_FRACTION = 139 / 747
# (column, coefficient) pairs of the logistic assignment model for the IHDP replica;
# binary columns only, mimicking selection on a demographic indicator.
_IHDP_ASSIGNMENT = ((6, 1.2), (7, -0.6), (8, 0.6))


def _bisect_intercept(linear: np.ndarray, target: float, lo=-30.0, hi=30.0, tol=1e-12) -> float:
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expit(linear + mid).mean() < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def ihdp_assignment(X: CovariateMatrix, seed: int,
                    treated_fraction: float = IHDP_TREATED_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    """Imbalanced treatment for the IHDP replica.

    Logistic propensity on three covariates, intercept bisected so the mean
    propensity equals ``treated_fraction``.  Returns ``(W, e)``.
    """
    cols = [(j, b) for j, b in _IHDP_ASSIGNMENT if j < X.d]
    linear = np.zeros(X.n)
    for j, b in cols:
        linear += b * X.values[:, j]
    e = expit(linear + _bisect_intercept(linear, treated_fraction))
    e = np.clip(e, 1e-6, 1 - 1e-6)
    w = (rng_from(seed).random(X.n) < e).astype(np.int64)
    if w.sum() == 0:
        w[int(np.argmax(e))] = 1
    return w, e


# --------------------------------------------------------------------------
# Files


def _fmt(x: float) -> str:
    return "%.17g" % x


def read_schema(path: str | Path) -> list[tuple[str, ColumnKind]]:
    """Read a column schema sidecar: ``{"columns": [{"name":..., "kind":...}, ...]}``."""
    spec = json.loads(Path(path).read_text())
    cols = spec["columns"] if isinstance(spec, dict) else spec
    return [(c["name"], ColumnKind(c["kind"])) for c in cols]


def write_schema(path: str | Path, X: CovariateMatrix) -> None:
    cols = [{"name": n, "kind": k.value} for n, k in zip(X.column_names, X.column_kinds)]
    Path(path).write_text(json.dumps({"columns": cols}, indent=2) + "\n")


def schema_path_for(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".schema.json")


def load_covariates(path: str | Path, schema=None, delimiter: str = ",") -> CovariateMatrix:
    """Load a delimited covariate table with a header row.

    ``schema`` may be a list of kinds, a list of ``(name, kind)`` pairs, a
    mapping ``name -> kind``, a path to a schema JSON file, or None (then
    ``<stem>.schema.json`` next to the table is used).
    """
    path = Path(path)
    if schema is None:
        schema = read_schema(schema_path_for(path))
    elif isinstance(schema, (str, Path)):
        schema = read_schema(schema)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CovariateError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CovariateError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise CovariateError(f"{path}:{lineno}: {exc}") from None
    if isinstance(schema, Mapping):
        missing = [h for h in header if h not in schema]
        if missing:
            raise CovariateError(f"{path}: no kind declared for columns {missing}")
        kinds = [ColumnKind(schema[h]) for h in header]
    else:
        schema = list(schema)
        if len(schema) != len(header):
            raise CovariateError(f"{path}: {len(header)} columns but schema declares {len(schema)}")
        if schema and isinstance(schema[0], (tuple, list)):
            for h, (name, _) in zip(header, schema):
                if h != name:
                    raise CovariateError(f"{path}: header column {h!r} does not match schema {name!r}")
            kinds = [ColumnKind(k) for _, k in schema]
        else:
            kinds = [ColumnKind(k) for k in schema]
    if not rows:
        raise CovariateError(f"{path}: no data rows")
    values = np.array(rows, dtype=float)
    # report kind violations with file coordinates (line 1 is the header)
    for j, (kind, name) in enumerate(zip(kinds, header)):
        try:
            _check_column(values[:, j], kind, name)
        except CovariateError as exc:
            raise CovariateError(f"{path}: {exc}") from None
    return CovariateMatrix(values, tuple(kinds), tuple(header))


def write_covariates(path: str | Path, X: CovariateMatrix, with_schema: bool = True) -> None:
    path = Path(path)
    int_cols = [k is not ColumnKind.CONTINUOUS for k in X.column_kinds]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(X.column_names)
        for row in X.values:
            w.writerow([str(int(v)) if is_int else _fmt(v) for v, is_int in zip(row, int_cols)])
    if with_schema:
        write_schema(schema_path_for(path), X)


def save_draw(directory: str | Path, draw: SimulationDraw, stem: str = "draw") -> Path:
    """Write a draw as ``<stem>.csv`` (per-unit vectors) plus covariate files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    test = np.zeros(draw.n, dtype=bool)
    test[draw.test] = True
    train = np.zeros(draw.n, dtype=bool)
    train[draw.train] = True
    out = directory / f"{stem}.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["w", "y", "mu0", "mu1", "tau", "e", "split"])
        for i in range(draw.n):
            part = "test" if test[i] else ("train" if train[i] else "none")
            w.writerow([int(draw.treatment[i]), _fmt(draw.outcome[i]), _fmt(draw.mu0[i]),
                        _fmt(draw.mu1[i]), _fmt(draw.tau[i]), _fmt(draw.propensity[i]), part])
    write_covariates(directory / f"{stem}_x.csv", draw.covariates)
    if draw.design is not None:
        write_covariates(directory / f"{stem}_design.csv", draw.design)
    (directory / f"{stem}.json").write_text(json.dumps({"draw_seed": draw.draw_seed}) + "\n")
    return out


def load_draw(directory: str | Path, stem: str = "draw") -> SimulationDraw:
    directory = Path(directory)
    X = load_covariates(directory / f"{stem}_x.csv")
    design_path = directory / f"{stem}_design.csv"
    design = load_covariates(design_path) if design_path.exists() else None
    cols: dict[str, list] = {k: [] for k in ("w", "y", "mu0", "mu1", "e", "split")}
    with (directory / f"{stem}.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            for k in cols:
                cols[k].append(row[k])
    split = np.array(cols["split"])
    meta = json.loads((directory / f"{stem}.json").read_text())
    n = len(split)
    return SimulationDraw(
        covariates=X,
        treatment=np.array(cols["w"], dtype=np.int64),
        outcome=np.array(cols["y"], dtype=float),
        mu0=np.array(cols["mu0"], dtype=float),
        mu1=np.array(cols["mu1"], dtype=float),
        propensity=np.array(cols["e"], dtype=float),
        split=TrainTestSplit(np.flatnonzero(split == "train"), np.flatnonzero(split == "test"), n),
        draw_seed=int(meta["draw_seed"]),
        design=design,
    )

