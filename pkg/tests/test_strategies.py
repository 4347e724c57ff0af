from dataclasses import replace

import numpy as np
import pytest

from catebench.data import (ColumnKind, CovariateMatrix, FixedPrefix, SimulationDraw, acic_like_profile,
                            make_split, synthesize_covariates)
from catebench.dgp.knobbed import PRESETS, generate_knobbed_draw
from catebench.learners.forest import ForestParams, fit_forest, predict_forest
from catebench.learners.mlp import MlpParams
from catebench.seeding import derive_seed
from catebench.strategies import (NAMED, Base, EmptyArmError, EstimatorSpec, NuisanceEstimates, Strategy,
                                  estimate_nuisances, fit_causal_forest, fit_estimator, fit_r_learner,
                                  fit_s_learner, fit_t_learner, named_estimator, predict_cate,
                                  pseudo_outcome_loss, r_loss)

FOREST = ForestParams(n_trees=50, min_leaf=5, seed=3)
TINY_MLP = {"representation_layers": (8, 8), "hypothesis_layers": (4,), "max_epochs": 15}


def make_draw(X, W, mu0, mu1, noise=None, e=0.5, n_test=None):
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    X = CovariateMatrix(X, (ColumnKind.CONTINUOUS,) * X.shape[1])
    W = np.asarray(W)
    y = np.where(W == 1, mu1, mu0) + (0.0 if noise is None else noise)
    n_test = n // 5 if n_test is None else n_test
    return SimulationDraw(X, W, y, mu0, mu1, np.full(n, e), make_split(n, FixedPrefix(n - n_test)), 0)


@pytest.fixture(scope="module")
def noisy_draw():
    rng = np.random.default_rng(21)
    X = rng.normal(size=(300, 3))
    W = rng.integers(0, 2, size=300)
    mu0 = X[:, 0] + X[:, 1] ** 2
    mu1 = mu0 + 1 + X[:, 2]
    return make_draw(X, W, mu0, mu1, noise=0.3 * rng.normal(size=300))


def test_spec_invariants():
    with pytest.raises(ValueError):
        EstimatorSpec(Strategy.TARNET, Base.FOREST, FOREST)
    with pytest.raises(ValueError):
        EstimatorSpec(Strategy.CAUSAL_FOREST, Base.MLP, MlpParams())
    with pytest.raises(TypeError):
        EstimatorSpec(Strategy.T_LEARNER, Base.MLP, FOREST)
    with pytest.raises(ValueError):
        EstimatorSpec(Strategy.R_LEARNER, Base.FOREST, FOREST, clip=0.5)


def test_named_estimators():
    for name in ("trf", "srf", "cf", "tnet", "tarnet", "rnet"):
        assert name in NAMED
    assert named_estimator("cf").base_params.n_trees == 200
    assert named_estimator("cf", "paper").base_params.n_trees == 2000
    assert named_estimator("tnet", "paper").base_params.representation_layers == (200, 200, 200)
    assert named_estimator("trf", overrides={"min_leaf": 9}).base_params.min_leaf == 9
    with pytest.raises(KeyError):
        named_estimator("xnet")
    with pytest.raises(ValueError):
        named_estimator("trf", "huge")


@pytest.mark.parametrize("name", ["trf", "srf", "tnet", "snet", "tarnet"])
def test_indirect_identity(noisy_draw, name):
    overrides = {"n_trees": 20} if NAMED[name][1] is Base.FOREST else TINY_MLP
    model = fit_estimator(noisy_draw, named_estimator(name, overrides=overrides).with_seed(4))
    X = noisy_draw.covariates.values
    assert model.indirect
    assert np.array_equal(predict_cate(model, X), model.predict_mu1(X) - model.predict_mu0(X))


@pytest.mark.parametrize("name", ["trf", "cf", "rrf", "tarnet", "rnet"])
def test_deterministic(noisy_draw, name):
    overrides = {"n_trees": 20} if NAMED[name][1] is Base.FOREST else TINY_MLP
    spec = named_estimator(name, overrides=overrides).with_seed(6)
    X = noisy_draw.covariates.values
    a = predict_cate(fit_estimator(noisy_draw, spec), X)
    assert np.array_equal(a, predict_cate(fit_estimator(noisy_draw, spec), X))


def test_t_forest_constant_surfaces(rng):
    X = rng.normal(size=(200, 2))
    W = rng.integers(0, 2, size=200)
    draw = make_draw(X, W, np.full(200, 1.25), np.full(200, 4.0))
    model = fit_t_learner(draw, EstimatorSpec(Strategy.T_LEARNER, Base.FOREST, FOREST))
    assert np.allclose(predict_cate(model, X), 2.75, rtol=0, atol=1e-6)


def test_t_learner_pointwise_bound(noisy_draw):
    model = fit_t_learner(noisy_draw, EstimatorSpec(Strategy.T_LEARNER, Base.FOREST, FOREST))
    X = noisy_draw.covariates.values[noisy_draw.test]
    err0 = model.predict_mu0(X) - noisy_draw.mu0[noisy_draw.test]
    err1 = model.predict_mu1(X) - noisy_draw.mu1[noisy_draw.test]
    err = predict_cate(model, X) - noisy_draw.tau[noisy_draw.test]
    assert np.all(err ** 2 <= 2 * err1 ** 2 + 2 * err0 ** 2)


def test_empty_arm(rng):
    X = rng.normal(size=(50, 2))
    W = np.r_[np.ones(48, int), np.zeros(2, int)]
    draw = make_draw(X, W, np.zeros(50), np.ones(50), n_test=2)
    with pytest.raises(EmptyArmError):
        fit_t_learner(draw, EstimatorSpec(Strategy.T_LEARNER, Base.FOREST, FOREST))


def test_s_forest_constant_effect():
    X = synthesize_covariates(2000, acic_like_profile(), 31)
    config = replace(PRESETS["acic-none"], noise_std=0.0)
    draw = generate_knobbed_draw(X, config, 32)
    c = float(draw.tau[0])
    assert np.all(draw.tau == c)
    spec = named_estimator("srf").with_seed(5)
    tau_hat = predict_cate(fit_s_learner(draw, spec), draw.covariates.values[draw.test])
    assert abs(tau_hat.mean() - c) <= abs(c) * 0.1 + 0.05


def test_s_forest_without_treatment_splits_predicts_zero(rng):
    X = rng.normal(size=(100, 2))
    W = rng.integers(0, 2, size=100)
    draw = make_draw(X, W, np.full(100, 3.0), np.full(100, 3.0))
    model = fit_s_learner(draw, EstimatorSpec(Strategy.S_LEARNER, Base.FOREST, FOREST))
    assert np.array_equal(predict_cate(model, X), np.zeros(100))


def test_nuisances_randomized_assignment(rng):
    X = rng.normal(size=(2000, 2))
    W = rng.integers(0, 2, size=2000)
    draw = make_draw(X, W, X[:, 0], X[:, 0] + 1)
    spec = EstimatorSpec(Strategy.R_LEARNER, Base.FOREST, replace(FOREST, n_trees=30))
    nuis = estimate_nuisances(draw, spec)
    assert 0.4 <= nuis.e_hat.mean() <= 0.6
    assert nuis.e_hat.min() >= spec.clip and nuis.e_hat.max() <= 1 - spec.clip


def test_nuisance_clipping(rng):
    X = rng.normal(size=(200, 1))
    W = (X[:, 0] > 0).astype(int)  # deterministic assignment drives raw estimates to 0 and 1
    draw = make_draw(X, W, np.zeros(200), np.ones(200))
    spec = EstimatorSpec(Strategy.R_LEARNER, Base.FOREST, FOREST, clip=0.05)
    e = estimate_nuisances(draw, spec).e_hat
    assert e.min() == 0.05 and e.max() == 0.95


def test_cross_fit_predictions_are_out_of_fold(noisy_draw):
    spec = EstimatorSpec(Strategy.R_LEARNER, Base.FOREST, replace(FOREST, n_trees=10), cross_fit=True)
    nuis = estimate_nuisances(noisy_draw, spec)
    assert sorted(np.unique(nuis.folds)) == list(range(spec.n_folds))
    tr = noisy_draw.train
    X, y = noisy_draw.covariates.values[tr], noisy_draw.outcome[tr]
    k = 2
    held = nuis.folds == k
    refit = fit_forest(X[~held], y[~held], params=replace(spec.base_params,
                                                         seed=derive_seed(spec.base_params.seed, [100 + k])))
    assert np.array_equal(nuis.m_hat[held], predict_forest(refit, X[held]))


def _perfect(draw, tau):
    tr = draw.train
    e = draw.propensity[tr]
    return NuisanceEstimates(draw.mu0[tr] + e * tau[tr], e)


def test_r_forest_zero_effect_perfect_nuisances(rng):
    X = rng.normal(size=(200, 2))
    W = rng.integers(0, 2, size=200)
    mu0 = np.sin(X[:, 0])
    draw = make_draw(X, W, mu0, mu0.copy())
    spec = EstimatorSpec(Strategy.R_LEARNER, Base.FOREST, FOREST)
    model = fit_r_learner(draw, spec, _perfect(draw, np.zeros(200)))
    assert np.allclose(predict_cate(model, X), 0.0, rtol=0, atol=1e-6)


def test_causal_forest_constant_effect_perfect_nuisances(rng):
    X = rng.normal(size=(300, 2))
    W = rng.integers(0, 2, size=300)
    mu0 = X[:, 0] ** 2
    draw = make_draw(X, W, mu0, mu0 + 1.5)
    model = fit_causal_forest(draw, EstimatorSpec(Strategy.CAUSAL_FOREST, Base.FOREST, FOREST),
                              _perfect(draw, np.full(300, 1.5)))
    forest = model.submodels["forest"]
    assert np.allclose(forest.value[forest.feature < 0], 1.5, rtol=0, atol=1e-8)
    assert np.allclose(predict_cate(model, X), 1.5, rtol=0, atol=1e-8)


def test_causal_forest_agrees_with_r_forest():
    rng = np.random.default_rng(8)
    n = 2000
    X = rng.uniform(-2, 2, size=(n, 1))
    W = rng.integers(0, 2, size=n)
    mu0 = np.cos(X[:, 0])
    tau = np.sin(X[:, 0]) + 1
    draw = make_draw(X, W, mu0, mu0 + tau, noise=0.2 * rng.normal(size=n))
    params = ForestParams(n_trees=100, seed=9)
    nuis = estimate_nuisances(draw, EstimatorSpec(Strategy.R_LEARNER, Base.FOREST, params))
    Xt = X[draw.test]
    cf = fit_causal_forest(draw, EstimatorSpec(Strategy.CAUSAL_FOREST, Base.FOREST, params), nuis)
    rf = fit_r_learner(draw, EstimatorSpec(Strategy.R_LEARNER, Base.FOREST, params), nuis)
    cf, rf = predict_cate(cf, Xt), predict_cate(rf, Xt)
    assert np.mean(np.abs(cf - rf)) < 0.5 * np.std(tau[draw.test])


def test_forest_effects_bounded_by_pseudo_outcomes(noisy_draw):
    for fit, strategy in ((fit_causal_forest, Strategy.CAUSAL_FOREST), (fit_r_learner, Strategy.R_LEARNER)):
        spec = EstimatorSpec(strategy, Base.FOREST, FOREST)
        nuis = estimate_nuisances(noisy_draw, spec)
        tr = noisy_draw.train
        pseudo = (noisy_draw.outcome[tr] - nuis.m_hat) / (noisy_draw.treatment[tr] - nuis.e_hat)
        tau_hat = predict_cate(fit(noisy_draw, spec, nuis), noisy_draw.covariates.values)
        assert pseudo.min() <= tau_hat.min() and tau_hat.max() <= pseudo.max()


def test_r_loss_identity(rng):
    y_res = rng.normal(size=50)
    w_res = rng.choice([-1, 1], size=50) * rng.uniform(0.01, 0.99, size=50)
    tau = rng.normal(size=50)
    assert np.allclose(r_loss(y_res, w_res, tau), pseudo_outcome_loss(y_res, w_res, tau), rtol=1e-12, atol=1e-12)
