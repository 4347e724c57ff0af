"""IHDP "setup B" response surfaces and the additive-effect variant.

Original surfaces::

    mu0(x) = exp((x + A) . beta)
    mu1(x) = x . beta - omega

with ``A`` a constant offset matrix and ``omega`` chosen so the average effect
on the treated units equals ``target_att``.  The additive variant keeps
``mu0`` and sets ``mu1*(x) = mu1(x) + mu0(x)``, which makes the effect linear.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from ..data import CovariateMatrix, SimulationDraw, TrainTestSplit
from ..metrics import sigma_of
from ..seeding import rng_from
from .grid import grid_exponent, snap

log = logging.getLogger(__name__)

#: |(x + A) . beta| beyond this flags the draw and triggers a fresh beta.
EXP_GUARD = 700.0
MAX_REGENERATIONS = 100


class IhdpVariant(str, enum.Enum):
    ORIGINAL = "original"
    ADDITIVE_TE = "additive"


class SurfaceOverflow(ArithmeticError):
    """exp((x + A) . beta) would overflow for at least one unit."""


@dataclass(frozen=True)
class IhdpConfig:
    coefficient_support: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4)
    coefficient_probs: tuple[float, ...] = (0.6, 0.1, 0.1, 0.1, 0.1)
    offset_value: float = 0.5
    noise_std: float = 1.0
    target_att: float = 4.0
    variant: IhdpVariant = IhdpVariant.ORIGINAL

    def __post_init__(self):
        support = tuple(float(v) for v in self.coefficient_support)
        probs = tuple(float(p) for p in self.coefficient_probs)
        if len(support) != len(probs) or not support:
            raise ValueError("coefficient support and probabilities must have the same non-zero length")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"coefficient probabilities must be non-negative and sum to 1, got {probs}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        object.__setattr__(self, "coefficient_support", support)
        object.__setattr__(self, "coefficient_probs", probs)
        object.__setattr__(self, "variant", IhdpVariant(self.variant))


@dataclass(frozen=True)
class IhdpSurfaces:
    beta: np.ndarray
    omega: float
    mu0: np.ndarray
    mu1: np.ndarray


def sample_beta(d: int, config: IhdpConfig, rng: np.random.Generator) -> np.ndarray:
    if d < 1:
        raise ValueError("d must be >= 1")
    support = np.asarray(config.coefficient_support)
    return support[rng.choice(support.size, size=d, p=np.asarray(config.coefficient_probs))]


def compute_surfaces(X: CovariateMatrix | np.ndarray, beta, offset_value: float):
    """Return ``(mu0_raw, mu1_raw) = (exp((x + A) . beta), x . beta)``.

    Raises SurfaceOverflow instead of returning infinities.
    """
    x = X.values if isinstance(X, CovariateMatrix) else np.atleast_2d(np.asarray(X, dtype=float))
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (x.shape[1],):
        raise ValueError(f"beta has length {beta.size}, covariates have {x.shape[1]} columns")
    exponent = (x + offset_value) @ beta
    worst = float(np.max(np.abs(exponent)))
    if worst > EXP_GUARD:
        raise SurfaceOverflow(f"|(x + A) . beta| reaches {worst:.1f} > {EXP_GUARD}")
    return np.exp(exponent), x @ beta


def calibrate_omega(mu1_raw, mu0, treated_mask, target_att: float) -> float:
    treated = np.asarray(treated_mask).astype(bool)
    if not treated.any():
        raise ValueError("cannot calibrate omega without treated units")
    diff = np.asarray(mu1_raw, dtype=float)[treated] - np.asarray(mu0, dtype=float)[treated]
    return float(diff.mean() - target_att)


def ihdp_surfaces(X: CovariateMatrix, W, config: IhdpConfig, rng: np.random.Generator):
    """Sample beta (redrawing on overflow) and build both surfaces.

    Returns ``(IhdpSurfaces, n_regenerations)``.
    """
    for attempt in range(MAX_REGENERATIONS + 1):
        beta = sample_beta(X.d, config, rng)
        try:
            mu0, mu1_raw = compute_surfaces(X, beta, config.offset_value)
        except SurfaceOverflow as exc:
            log.info("regenerating beta (attempt %d): %s", attempt + 1, exc)
            continue
        omega = calibrate_omega(mu1_raw, mu0, W, config.target_att)
        # polish against cancellation when mu0 is large
        for _ in range(3):
            omega += calibrate_omega(mu1_raw - omega, mu0, W, config.target_att)
        # snap both surfaces onto one dyadic grid so sums and differences are
        # exact, then re-center the effect on the grid
        k = grid_exponent(mu0, mu1_raw - omega, mu0 + np.abs(mu1_raw - omega))
        mu0 = snap(mu0, k)
        mu1 = snap(mu1_raw - omega, k)
        shift = snap(calibrate_omega(mu1, mu0, W, config.target_att), k)
        mu1 = mu1 - shift
        omega += float(shift)
        if config.variant is IhdpVariant.ADDITIVE_TE:
            mu1 = mu1 + mu0
        return IhdpSurfaces(beta, omega, mu0, mu1), attempt
    raise SurfaceOverflow(f"no finite surfaces after {MAX_REGENERATIONS} regenerations")


def generate_ihdp_draw(X: CovariateMatrix, W, config: IhdpConfig, seed: int,
                       split: TrainTestSplit, propensity=None) -> SimulationDraw:
    """One IHDP draw over fixed covariates and treatment.

    beta and the noise are drawn from two independent streams derived from
    ``seed``.  ``propensity`` defaults to the treated fraction for every unit.
    """
    W = np.asarray(W).astype(np.int64)
    if W.shape != (X.n,):
        raise ValueError(f"treatment has shape {W.shape}, expected ({X.n},)")
    surfaces, regenerations = ihdp_surfaces(X, W, config, rng_from(seed, [0]))
    noise = rng_from(seed, [1]).normal(0.0, 1.0, size=X.n) * config.noise_std
    y = np.where(W == 1, surfaces.mu1, surfaces.mu0) + noise
    if propensity is None:
        propensity = np.full(X.n, W.mean())
    return SimulationDraw(
        covariates=X,
        treatment=W,
        outcome=y,
        mu0=surfaces.mu0,
        mu1=surfaces.mu1,
        propensity=propensity,
        split=split,
        draw_seed=seed,
        diagnostics={"omega": surfaces.omega, "regenerations": regenerations,
                     "n_nonzero_beta": int(np.count_nonzero(surfaces.beta))},
    )


def sigma_tau_of_draw(draw: SimulationDraw) -> float:
    if draw.test.size == 0:
        raise ValueError("empty test set")
    return sigma_of(draw.tau[draw.test])

