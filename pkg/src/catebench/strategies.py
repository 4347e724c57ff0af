"""CATE estimation strategies built on the forest and MLP base learners.

Indirect strategies (T-learner, S-learner, TARNet) estimate both potential
outcome surfaces and difference them.  Direct strategies (R-learner, causal
forest) residualize outcome and treatment on nuisance estimates and fit the
effect to the residual-on-residual relation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import SimulationDraw
from .learners.forest import ForestParams, fit_forest, predict_forest
from .learners.mlp import Architecture, MlpParams, fit_mlp, predict_mlp
from .seeding import derive_seed

#: propensity estimates are clipped to [CLIP, 1 - CLIP]
CLIP = 0.01


class Strategy(str, enum.Enum):
    T_LEARNER = "t_learner"
    S_LEARNER = "s_learner"
    TARNET = "tarnet"
    R_LEARNER = "r_learner"
    CAUSAL_FOREST = "causal_forest"


class Base(str, enum.Enum):
    FOREST = "forest"
    MLP = "mlp"


INDIRECT = frozenset({Strategy.T_LEARNER, Strategy.S_LEARNER, Strategy.TARNET})


class EmptyArmError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorSpec:
    strategy: Strategy
    base: Base
    base_params: ForestParams | MlpParams
    cross_fit: bool = False
    clip: float = CLIP
    n_folds: int = 5

    def __post_init__(self):
        strategy, base = Strategy(self.strategy), Base(self.base)
        object.__setattr__(self, "strategy", strategy)
        object.__setattr__(self, "base", base)
        if strategy is Strategy.TARNET and base is not Base.MLP:
            raise ValueError("TARNet requires the MLP base")
        if strategy is Strategy.CAUSAL_FOREST and base is not Base.FOREST:
            raise ValueError("causal forest requires the forest base")
        expected = ForestParams if base is Base.FOREST else MlpParams
        if not isinstance(self.base_params, expected):
            raise TypeError(f"{base.value} base needs {expected.__name__}")
        if not 0.0 < self.clip < 0.5:
            raise ValueError("clip must lie in (0, 0.5)")

    @property
    def indirect(self) -> bool:
        return self.strategy in INDIRECT

    def with_seed(self, seed: int) -> "EstimatorSpec":
        return replace(self, base_params=replace(self.base_params, seed=seed))


@dataclass
class CATEModel:
    strategy: Strategy
    predict_tau: Callable[[np.ndarray], np.ndarray]
    predict_mu0: Callable[[np.ndarray], np.ndarray] | None = None
    predict_mu1: Callable[[np.ndarray], np.ndarray] | None = None
    submodels: dict = field(default_factory=dict)

    @property
    def indirect(self) -> bool:
        return self.predict_mu0 is not None


@dataclass(frozen=True)
class NuisanceEstimates:
    m_hat: np.ndarray
    e_hat: np.ndarray
    folds: np.ndarray | None = None


def _x(X) -> np.ndarray:
    return np.asarray(X.values if hasattr(X, "column_kinds") else X, dtype=float)


def _fit(spec: EstimatorSpec, X, y, seed: int, **kw):
    """Fit the spec's base regressor; returns a predict function."""
    if spec.base is Base.FOREST:
        model = fit_forest(X, y, kw.get("w"), replace(spec.base_params, seed=seed))
        return (lambda Z: predict_forest(model, Z)), model
    model = fit_mlp(X, y, replace(spec.base_params, seed=seed), scale=kw.get("scale"))
    return (lambda Z: predict_mlp(model, Z)), model


def _indirect(strategy, f0, f1, sub) -> CATEModel:
    return CATEModel(strategy, predict_tau=lambda Z: f1(Z) - f0(Z),
                     predict_mu0=f0, predict_mu1=f1, submodels=sub)


def _seed(spec: EstimatorSpec, k: int) -> int:
    return derive_seed(spec.base_params.seed, [k])


def fit_t_learner(draw: SimulationDraw, spec: EstimatorSpec) -> CATEModel:
    tr = draw.train
    X = _x(draw.covariates)[tr]
    y = draw.outcome[tr]
    w = draw.treatment[tr]
    minimum = spec.base_params.min_leaf if spec.base is Base.FOREST else 2
    for arm in (0, 1):
        if np.count_nonzero(w == arm) < minimum:
            raise EmptyArmError(f"treatment arm {arm} has fewer than {minimum} training units")
    f0, m0 = _fit(spec, X[w == 0], y[w == 0], _seed(spec, 0))
    f1, m1 = _fit(spec, X[w == 1], y[w == 1], _seed(spec, 1))
    return _indirect(Strategy.T_LEARNER, f0, f1, {"mu0": m0, "mu1": m1})


def fit_s_learner(draw: SimulationDraw, spec: EstimatorSpec) -> CATEModel:
    tr = draw.train
    X = _x(draw.covariates)
    XW = np.column_stack([X[tr], draw.treatment[tr]])
    f, model = _fit(spec, XW, draw.outcome[tr], _seed(spec, 0))

    def arm(value):
        return lambda Z: f(np.column_stack([_x(Z), np.full(len(_x(Z)), float(value))]))

    return _indirect(Strategy.S_LEARNER, arm(0), arm(1), {"mu": model})


def fit_tarnet(draw: SimulationDraw, spec: EstimatorSpec) -> CATEModel:
    if spec.base is not Base.MLP:
        raise ValueError("TARNet requires the MLP base")
    tr = draw.train
    X = _x(draw.covariates)[tr]
    model = fit_mlp(X, draw.outcome[tr], replace(spec.base_params, seed=_seed(spec, 0)),
                    Architecture.TWO_HEADS, treatment=draw.treatment[tr])
    return _indirect(Strategy.TARNET, lambda Z: predict_mlp(model, _x(Z), head=0),
                     lambda Z: predict_mlp(model, _x(Z), head=1), {"net": model})


def estimate_nuisances(draw: SimulationDraw, spec: EstimatorSpec) -> NuisanceEstimates:
    """Estimates of E[Y|X] and e(X) at the training units, in training order.

    In-sample fits by default; with ``spec.cross_fit`` every unit's estimate
    comes from a model fit on the other folds.
    """
    tr = draw.train
    X = _x(draw.covariates)[tr]
    y = draw.outcome[tr]
    w = draw.treatment[tr].astype(float)
    n = tr.size
    if not spec.cross_fit:
        fm, _ = _fit(spec, X, y, _seed(spec, 10))
        fe, _ = _fit(spec, X, w, _seed(spec, 11))
        m_hat, e_hat = fm(X), fe(X)
        folds = None
    else:
        folds = np.random.default_rng(_seed(spec, 12)).permutation(n) % spec.n_folds
        m_hat = np.empty(n)
        e_hat = np.empty(n)
        for k in range(spec.n_folds):
            held = folds == k
            fm, _ = _fit(spec, X[~held], y[~held], _seed(spec, 100 + k))
            fe, _ = _fit(spec, X[~held], w[~held], _seed(spec, 200 + k))
            m_hat[held] = fm(X[held])
            e_hat[held] = fe(X[held])
    e_hat = np.clip(e_hat, spec.clip, 1.0 - spec.clip)
    return NuisanceEstimates(m_hat, e_hat, folds)


def r_loss(y_res, w_res, tau) -> np.ndarray:
    """Per-sample residual-on-residual loss ``((Y - m) - (W - e) tau)**2``."""
    return (np.asarray(y_res) - np.asarray(w_res) * np.asarray(tau)) ** 2


def pseudo_outcome_loss(y_res, w_res, tau) -> np.ndarray:
    """Per-sample ``(W - e)**2 * (Y~ / W~ - tau)**2``; equal to :func:`r_loss`."""
    w_res = np.asarray(w_res)
    return w_res ** 2 * (np.asarray(y_res) / w_res - np.asarray(tau)) ** 2


def _residuals(draw, spec, nuisances):
    tr = draw.train
    nuisances = nuisances if nuisances is not None else estimate_nuisances(draw, spec)
    y_res = draw.outcome[tr] - nuisances.m_hat
    w_res = draw.treatment[tr] - nuisances.e_hat
    return y_res, w_res, nuisances


def fit_r_learner(draw: SimulationDraw, spec: EstimatorSpec,
                  nuisances: NuisanceEstimates | None = None) -> CATEModel:
    y_res, w_res, nuisances = _residuals(draw, spec, nuisances)
    X = _x(draw.covariates)[draw.train]
    if spec.base is Base.FOREST:
        f, model = _fit(spec, X, y_res / w_res, _seed(spec, 0), w=w_res ** 2)
    else:
        f, model = _fit(spec, X, y_res, _seed(spec, 0), scale=w_res)
    return CATEModel(Strategy.R_LEARNER, predict_tau=lambda Z: f(_x(Z)),
                     submodels={"tau": model, "nuisances": nuisances})


def fit_causal_forest(draw: SimulationDraw, spec: EstimatorSpec,
                      nuisances: NuisanceEstimates | None = None) -> CATEModel:
    if spec.base is not Base.FOREST:
        raise ValueError("causal forest requires the forest base")
    y_res, w_res, nuisances = _residuals(draw, spec, nuisances)
    X = _x(draw.covariates)[draw.train]
    model = fit_forest(X, y_res, params=replace(spec.base_params, seed=_seed(spec, 0)),
                       treatment_residual=w_res, treatment=draw.treatment[draw.train])
    return CATEModel(Strategy.CAUSAL_FOREST, predict_tau=lambda Z: predict_forest(model, _x(Z)),
                     submodels={"forest": model, "nuisances": nuisances})


FITTERS = {
    Strategy.T_LEARNER: fit_t_learner,
    Strategy.S_LEARNER: fit_s_learner,
    Strategy.TARNET: fit_tarnet,
    Strategy.R_LEARNER: fit_r_learner,
    Strategy.CAUSAL_FOREST: fit_causal_forest,
}


def fit_estimator(draw: SimulationDraw, spec: EstimatorSpec) -> CATEModel:
    return FITTERS[spec.strategy](draw, spec)


def predict_cate(model: CATEModel, X_new) -> np.ndarray:
    return model.predict_tau(_x(X_new))


# --------------------------------------------------------------------------
# Named estimators

DESK_FOREST = ForestParams(n_trees=200)
PAPER_FOREST = ForestParams(n_trees=2000)
DESK_MLP = MlpParams(representation_layers=(50, 50, 50), hypothesis_layers=(25, 25))
PAPER_MLP = MlpParams()

NAMED = {
    "trf": (Strategy.T_LEARNER, Base.FOREST),
    "srf": (Strategy.S_LEARNER, Base.FOREST),
    "rrf": (Strategy.R_LEARNER, Base.FOREST),
    "cf": (Strategy.CAUSAL_FOREST, Base.FOREST),
    "tnet": (Strategy.T_LEARNER, Base.MLP),
    "snet": (Strategy.S_LEARNER, Base.MLP),
    "tarnet": (Strategy.TARNET, Base.MLP),
    "rnet": (Strategy.R_LEARNER, Base.MLP),
}


def named_estimator(name: str, preset: str = "desk", overrides: dict | None = None,
                    cross_fit: bool = False) -> EstimatorSpec:
    """Resolve a harness estimator name (``trf``, ``cf``, ``tarnet``, ...)."""
    try:
        strategy, base = NAMED[name]
    except KeyError:
        raise KeyError(f"unknown estimator {name!r}; known: {sorted(NAMED)}") from None
    if preset not in ("desk", "paper"):
        raise ValueError(f"unknown preset {preset!r}")
    if base is Base.FOREST:
        params = DESK_FOREST if preset == "desk" else PAPER_FOREST
    else:
        params = DESK_MLP if preset == "desk" else PAPER_MLP
    if overrides:
        params = replace(params, **overrides)
    return EstimatorSpec(strategy, base, params, cross_fit=cross_fit)
