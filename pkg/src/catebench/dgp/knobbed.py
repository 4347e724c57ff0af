"""ACIC-style data-generating family with explicit experimental knobs.

Surfaces are additive in the treatment::

    mu_w(x) = f0(x') + w * f_tau(x')

where ``x'`` is the (optionally dichotomized) design.  ``f0`` is a random
sum of linear, pairwise-product and exp-of-linear terms; the heterogeneity
knob decides what ``f_tau`` looks like:

* none: a constant
* low:  a constant plus a sparse linear function of ``tau_sparsity`` columns
* high: linear, product and exp-of-linear terms, on the scale of ``f0``

The three presets ``acic-none``, ``acic-low`` and ``acic-high`` differ only in
that knob.  They emulate the knob values of ACIC 2016 settings 2, 26 and 7;
they are not replicas of those settings.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from scipy.special import expit

from ..data import (ColumnKind, CovariateMatrix, FixedPrefix, SimulationDraw,
                    TrainTestSplit, _bisect_intercept, make_split)
from ..seeding import derive_seed, rng_from
from .grid import grid_exponent, snap


class Heterogeneity(str, enum.Enum):
    NONE = "none"
    LOW = "low"
    HIGH = "high"


class Shape(str, enum.Enum):
    LINEAR = "linear"
    PRODUCT = "product"
    EXP = "exp"


ACIC_TRAIN_FRACTION = 4000 / 4802


@dataclass(frozen=True)
class KnobConfig:
    heterogeneity: Heterogeneity = Heterogeneity.HIGH
    confounding_strength: float = 1.0
    # share of the assignment score taken from f0 rather than from an
    # independent random linear score (1 = assignment tracks f0 exactly)
    alignment: float = 1.0
    n_assignment_columns: int = 5
    overlap_clamp: float = 0.05
    n_linear: int = 4
    n_interaction: int = 2
    n_exponential: int = 2
    tau_sparsity: int = 3
    noise_std: float = 0.5
    # the constant part of f_tau is drawn uniformly from this range
    tau_constant_range: tuple[float, float] = (1.0, 3.0)
    dichotomize_inputs: bool = True
    f0_sd: float = 1.0
    # sd(f_tau) / sd(f0) for the low and high settings
    low_ratio: float = 0.25
    high_ratio: float = 1.0
    n_train: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "heterogeneity", Heterogeneity(self.heterogeneity))
        if not 0.0 < self.overlap_clamp <= 0.5:
            raise ValueError(f"overlap_clamp must lie in (0, 0.5], got {self.overlap_clamp}")
        if min(self.n_linear, self.n_interaction, self.n_exponential) < 0:
            raise ValueError("term counts must be >= 0")
        if self.tau_sparsity < 1 and self.heterogeneity is not Heterogeneity.NONE:
            raise ValueError("tau_sparsity must be >= 1")
        if self.noise_std < 0 or self.confounding_strength < 0:
            raise ValueError("noise_std and confounding_strength must be >= 0")
        lo, hi = self.tau_constant_range
        if lo > hi:
            raise ValueError(f"tau_constant_range must be ordered, got {self.tau_constant_range}")
        if not 0.0 <= self.alignment <= 1.0:
            raise ValueError(f"alignment must lie in [0, 1], got {self.alignment}")
        if self.n_assignment_columns < 1:
            raise ValueError("n_assignment_columns must be >= 1")


PRESETS: Mapping[str, KnobConfig] = {
    "acic-none": KnobConfig(heterogeneity=Heterogeneity.NONE, alignment=0.1),
    "acic-low": KnobConfig(heterogeneity=Heterogeneity.LOW, alignment=0.1),
    "acic-high": KnobConfig(heterogeneity=Heterogeneity.HIGH, alignment=0.1),
}


@dataclass(frozen=True)
class Term:
    shape: Shape
    columns: tuple[int, ...]
    coefs: tuple[float, ...]
    weight: float = 1.0

    def __call__(self, z: np.ndarray) -> np.ndarray:
        cols = list(self.columns)
        if self.shape is Shape.LINEAR:
            return self.weight * (z[:, cols] @ np.asarray(self.coefs))
        if self.shape is Shape.PRODUCT:
            return self.weight * np.prod(z[:, cols], axis=1)
        return self.weight * np.exp(z[:, cols] @ np.asarray(self.coefs))


@dataclass(frozen=True)
class ResponseSurfaces:
    """Sampled term lists plus the affine calibration fixed on a design.

    Before :meth:`calibrated` is called, columns are used unstandardized and
    both functions are the raw term sums (plus the constant effect).
    """

    f0_terms: tuple[Term, ...]
    ftau_terms: tuple[Term, ...]
    tau_constant: float
    d: int
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    f0_affine: tuple[float, float] = (0.0, 1.0)
    tau_affine: tuple[float, float] = (0.0, 1.0)

    def _z(self, X) -> np.ndarray:
        x = X.values if isinstance(X, CovariateMatrix) else np.atleast_2d(np.asarray(X, dtype=float))
        if x.shape[1] != self.d:
            raise ValueError(f"surfaces expect {self.d} columns, got {x.shape[1]}")
        if self.center is None:
            return x
        return (x - self.center) / self.scale

    @staticmethod
    def _sum(terms, z) -> np.ndarray:
        out = np.zeros(z.shape[0])
        for t in terms:
            out += t(z)
        return out

    def f0(self, X) -> np.ndarray:
        shift, mult = self.f0_affine
        return (self._sum(self.f0_terms, self._z(X)) - shift) * mult

    def ftau(self, X) -> np.ndarray:
        z = self._z(X)
        if not self.ftau_terms:
            return np.full(z.shape[0], self.tau_constant)
        shift, mult = self.tau_affine
        return self.tau_constant + (self._sum(self.ftau_terms, z) - shift) * mult

    def tau_columns(self) -> set[int]:
        return {c for t in self.ftau_terms for c in t.columns}

    def calibrated(self, X: CovariateMatrix, config: KnobConfig) -> "ResponseSurfaces":
        """Fix column standardization and output scales on design ``X``.

        ``f0`` gets mean 0 and sd ``config.f0_sd``; a heterogeneous ``f_tau``
        gets mean ``tau_constant`` and sd ``ratio * f0_sd``.
        """
        center = X.values.mean(axis=0)
        scale = X.values.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        out = replace(self, center=center, scale=scale)
        z = out._z(X)
        raw0 = self._sum(self.f0_terms, z)
        sd0 = raw0.std()
        out = replace(out, f0_affine=(float(raw0.mean()), config.f0_sd / sd0 if sd0 > 0 else 0.0))
        if self.ftau_terms:
            ratio = config.low_ratio if config.heterogeneity is Heterogeneity.LOW else config.high_ratio
            rawt = self._sum(self.ftau_terms, z)
            sdt = rawt.std()
            mult = ratio * config.f0_sd / sdt if sdt > 0 else 0.0
            out = replace(out, tau_affine=(float(rawt.mean()), mult))
        return out


def _sample_terms(rng, d, shape, count, n_cols) -> list[Term]:
    terms = []
    for _ in range(count):
        cols = tuple(int(c) for c in np.sort(rng.choice(d, size=min(n_cols, d), replace=False)))
        if shape is Shape.EXP:
            coefs = tuple(float(c) for c in rng.uniform(0.2, 0.5, size=len(cols)) * rng.choice([-1, 1], size=len(cols)))
        else:
            coefs = tuple(float(c) for c in rng.uniform(0.5, 1.0, size=len(cols)) * rng.choice([-1, 1], size=len(cols)))
        weight = float(rng.uniform(0.5, 1.5) * rng.choice([-1, 1])) if shape is Shape.PRODUCT else 1.0
        terms.append(Term(shape, cols, coefs, weight))
    return terms


def build_response_family(config: KnobConfig, d: int, seed: int) -> ResponseSurfaces:
    if d < 1:
        raise ValueError("d must be >= 1")
    if config.heterogeneity is not Heterogeneity.NONE and config.tau_sparsity > d:
        raise ValueError(f"tau_sparsity {config.tau_sparsity} exceeds the {d} available columns")
    rng = rng_from(seed)
    f0 = (_sample_terms(rng, d, Shape.LINEAR, config.n_linear, 1)
          + _sample_terms(rng, d, Shape.PRODUCT, config.n_interaction, 2)
          + _sample_terms(rng, d, Shape.EXP, config.n_exponential, 2))
    tau_constant = float(rng.uniform(*config.tau_constant_range))
    ftau: list[Term] = []
    het = config.heterogeneity
    if het is not Heterogeneity.NONE:
        cols = tuple(int(c) for c in np.sort(rng.choice(d, size=config.tau_sparsity, replace=False)))
        coefs = rng.uniform(0.5, 1.0, size=len(cols)) * rng.choice([-1, 1], size=len(cols))
        ftau.append(Term(Shape.LINEAR, cols, tuple(float(c) for c in coefs)))
        if het is Heterogeneity.HIGH:
            ftau += _sample_terms(rng, d, Shape.PRODUCT, 1, 2)
            ftau += _sample_terms(rng, d, Shape.EXP, 1, 2)
    return ResponseSurfaces(tuple(f0), tuple(ftau), tau_constant, d)


def count_thresholds(X: CovariateMatrix, rows=None) -> dict[int, float]:
    """Per-column median of every Count column over ``rows`` (all rows by default)."""
    vals = X.values if rows is None else X.values[rows]
    return {j: float(np.median(vals[:, j])) for j in X.columns_of(ColumnKind.COUNT)}


def dichotomize_counts(X: CovariateMatrix, thresholds="median", rows=None) -> CovariateMatrix:
    """Replace each Count column ``c`` by the indicator ``x_c > threshold_c``.

    ``thresholds`` is ``"median"`` (computed over ``rows``), a mapping
    ``column index -> threshold`` or a sequence aligned with the Count columns.
    """
    count_cols = X.columns_of(ColumnKind.COUNT)
    if isinstance(thresholds, str):
        if thresholds != "median":
            raise ValueError(f"unknown threshold policy {thresholds!r}")
        thresholds = count_thresholds(X, rows)
    elif not isinstance(thresholds, Mapping):
        thresholds = list(thresholds)
        if len(thresholds) != len(count_cols):
            raise ValueError(f"{len(thresholds)} thresholds for {len(count_cols)} count columns")
        thresholds = dict(zip(count_cols, thresholds))
    extra = sorted(set(thresholds) - set(count_cols))
    if extra:
        raise ValueError(f"thresholds given for non-count columns {extra}")
    missing = sorted(set(count_cols) - set(thresholds))
    if missing:
        raise ValueError(f"no threshold for count columns {missing}")
    if not count_cols:
        return X
    values = X.values.copy()
    kinds = list(X.column_kinds)
    for j, thr in thresholds.items():
        values[:, j] = values[:, j] > thr
        kinds[j] = ColumnKind.BINARY
    return CovariateMatrix(values, tuple(kinds), X.column_names)


def _standardize(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def assign_treatment(X: CovariateMatrix, surfaces: ResponseSurfaces, config: KnobConfig,
                     seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Logistic assignment on a standardized score, mean propensity 0.5.

    The score mixes ``f0`` (weight ``alignment``) with a random linear score
    of ``n_assignment_columns`` covariates (weight ``sqrt(1 - alignment**2)``).
    """
    score = _standardize(surfaces.f0(X))
    if config.alignment < 1.0:
        rng = rng_from(seed, [0])
        k = min(config.n_assignment_columns, X.d)
        cols = np.sort(rng.choice(X.d, size=k, replace=False))
        g = X.values[:, cols] @ rng.normal(size=k)
        score = config.alignment * score + np.sqrt(1.0 - config.alignment ** 2) * _standardize(g)
    linear = config.confounding_strength * score
    intercept = _bisect_intercept(linear, 0.5) if config.confounding_strength > 0 else 0.0
    e = np.clip(expit(linear + intercept), config.overlap_clamp, 1 - config.overlap_clamp)
    w = (rng_from(seed).random(X.n) < e).astype(np.int64)
    return w, e


def default_split(n: int, config: KnobConfig) -> TrainTestSplit:
    n_train = config.n_train if config.n_train is not None else int(round(n * ACIC_TRAIN_FRACTION))
    return make_split(n, FixedPrefix(n_train))


def generate_knobbed_draw(X: CovariateMatrix, config: KnobConfig, seed: int,
                          split: TrainTestSplit | None = None) -> SimulationDraw:
    split = split if split is not None else default_split(X.n, config)
    design = dichotomize_counts(X, "median", rows=split.train_indices) if config.dichotomize_inputs else X
    surfaces = build_response_family(config, X.d, derive_seed(seed, [0])).calibrated(design, config)
    f0, ftau = surfaces.f0(design), surfaces.ftau(design)
    k = grid_exponent(np.abs(f0) + np.abs(ftau))
    mu0 = snap(f0, k)
    mu1 = mu0 + snap(ftau, k)  # exact on the grid, so mu1 - mu0 is f_tau bit for bit
    w, e = assign_treatment(design, surfaces, config, derive_seed(seed, [1]))
    noise = rng_from(seed, [2]).normal(0.0, 1.0, size=X.n) * config.noise_std
    y = np.where(w == 1, mu1, mu0) + noise
    return SimulationDraw(
        covariates=X,
        treatment=w,
        outcome=y,
        mu0=mu0,
        mu1=mu1,
        propensity=e,
        split=split,
        draw_seed=seed,
        design=design if design is not X else None,
        diagnostics={"tau_constant": surfaces.tau_constant},
    )

