import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from catebench.data import (ColumnKind, ColumnSpec, CovariateError, CovariateMatrix, CovariateProfile,
                            ExplicitIndices, FixedPrefix, HoldoutFraction, IHDP_TREATED_FRACTION, SimulationDraw,
                            SplitError, acic_like_profile, ihdp_assignment, ihdp_like_profile, load_covariates,
                            load_draw, make_split, save_draw, synthesize_covariates, write_covariates)

C, B, K = ColumnKind.CONTINUOUS, ColumnKind.BINARY, ColumnKind.COUNT


def _table(tmp_path, text, name="x.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_well_formed(tmp_path):
    path = _table(tmp_path, "a,b\n0.5,1\n-1.25,0\n3,1\n")
    X = load_covariates(path, [C, B])
    assert (X.n, X.d) == (3, 2)
    assert X.column_names == ("a", "b")
    assert X.values[1, 0] == -1.25


def test_load_binary_violation_names_cell(tmp_path):
    path = _table(tmp_path, "a,b\n0.5,1\n1.0,2\n")
    with pytest.raises(CovariateError, match=r"row 1, column 'b'"):
        load_covariates(path, [C, B])


def test_load_count_violation(tmp_path):
    path = _table(tmp_path, "c\n1\n2.5\n")
    with pytest.raises(CovariateError, match="non-negative integer"):
        load_covariates(path, [K])


def test_load_rejects_missing_and_ragged(tmp_path):
    with pytest.raises(CovariateError):
        load_covariates(_table(tmp_path, "a,b\n1,\n", "m.csv"), [C, C])
    with pytest.raises(CovariateError, match="expected 2 fields"):
        load_covariates(_table(tmp_path, "a,b\n1,2,3\n", "r.csv"), [C, C])
    with pytest.raises(CovariateError, match="schema declares"):
        load_covariates(_table(tmp_path, "a,b\n1,2\n", "s.csv"), [C])


def test_schema_sidecar_and_mapping(tmp_path):
    path = _table(tmp_path, "a,b\n0.5,1\n")
    (tmp_path / "x.schema.json").write_text(json.dumps({"columns": [{"name": "a", "kind": "continuous"},
                                                                    {"name": "b", "kind": "binary"}]}))
    assert load_covariates(path).column_kinds == (C, B)
    assert load_covariates(path, {"b": "binary", "a": "continuous"}).column_kinds == (C, B)


def test_covariate_matrix_invariants():
    with pytest.raises(CovariateError):
        CovariateMatrix(np.zeros((0, 2)), (C, C))
    with pytest.raises(CovariateError):
        CovariateMatrix(np.array([[np.nan]]), (C,))
    with pytest.raises(CovariateError):
        CovariateMatrix(np.array([[-1.0]]), (K,))
    X = CovariateMatrix(np.array([[1.0, 0.0]]), (C, B))
    with pytest.raises(ValueError):
        X.values[0, 0] = 3.0


def test_synthesize_ihdp_profile_shape():
    X = synthesize_covariates(747, ihdp_like_profile(), 1)
    assert (X.n, X.d) == (747, 25)
    assert X.columns_of(C) == list(range(6))
    assert len(X.columns_of(B)) == 19


def test_synthesize_small_and_deterministic():
    prof = CovariateProfile((ColumnSpec(C),))
    assert synthesize_covariates(1, prof, 0).values.shape == (1, 1)
    a = synthesize_covariates(50, acic_like_profile(), 9)
    b = synthesize_covariates(50, acic_like_profile(), 9)
    assert np.array_equal(a.values, b.values)
    assert a.d == 58


def test_invalid_profile():
    with pytest.raises(CovariateError):
        CovariateProfile((ColumnSpec(B, p=1.2),))
    with pytest.raises(CovariateError):
        CovariateProfile((ColumnSpec(K, lam=0.0),))


def test_holdout_sizes():
    s = make_split(747, HoldoutFraction(0.10))
    assert (s.test_indices.size, s.train_indices.size) == (75, 672)
    s = make_split(2, HoldoutFraction(0.5))
    assert (s.train_indices.size, s.test_indices.size) == (1, 1)


def test_fixed_prefix():
    s = make_split(4802, FixedPrefix(4000))
    assert np.array_equal(s.train_indices, np.arange(4000))
    assert np.array_equal(s.test_indices, np.arange(4000, 4802))


@given(st.integers(2, 500), st.floats(0.01, 0.99), st.one_of(st.none(), st.integers(0, 10 ** 6)))
@settings(max_examples=60, deadline=None)
def test_holdout_property(n, f, seed):
    n_test = int(round(f * n))
    if n_test == 0 or n_test == n:
        with pytest.raises(SplitError):
            make_split(n, HoldoutFraction(f), seed=seed)
        return
    s = make_split(n, HoldoutFraction(f), seed=seed)
    assert s.test_indices.size == n_test
    both = np.concatenate([s.train_indices, s.test_indices])
    assert np.array_equal(np.sort(both), np.arange(n))


def test_split_errors():
    with pytest.raises(SplitError):
        make_split(3, ExplicitIndices([0, 1], [1]))
    with pytest.raises(SplitError):
        make_split(3, ExplicitIndices([0], [5]))
    with pytest.raises(SplitError):
        make_split(3, FixedPrefix(3))


def test_ihdp_assignment_fraction():
    X = synthesize_covariates(747, ihdp_like_profile(), 2)
    w, e = ihdp_assignment(X, 3)
    assert abs(e.mean() - IHDP_TREATED_FRACTION) < 1e-9
    assert np.all((e > 0) & (e < 1))
    assert set(np.unique(w)) <= {0, 1}


def _draw(n=6):
    X = CovariateMatrix(np.arange(n, dtype=float)[:, None], (C,))
    mu0 = np.linspace(0, 1, n)
    mu1 = mu0 + 0.3
    w = np.array([0, 1] * (n // 2))
    return SimulationDraw(X, w, np.where(w, mu1, mu0), mu0, mu1, np.full(n, 0.5),
                          make_split(n, FixedPrefix(n - 2)), 7)


def test_draw_tau_exact():
    d = _draw()
    assert np.max(np.abs(d.tau - (d.mu1 - d.mu0))) == 0
    with pytest.raises(ValueError, match="tau"):
        SimulationDraw(d.covariates, d.treatment, d.outcome, d.mu0, d.mu1, d.propensity, d.split, 7,
                       tau=d.tau + 1e-9)


def test_draw_propensity_strict():
    d = _draw()
    with pytest.raises(ValueError, match="propensity"):
        SimulationDraw(d.covariates, d.treatment, d.outcome, d.mu0, d.mu1, np.ones(6), d.split, 7)


def test_round_trip_bit_exact(tmp_path, ihdp_draw):
    save_draw(tmp_path, ihdp_draw, "d")
    back = load_draw(tmp_path, "d")
    for name in ("treatment", "outcome", "mu0", "mu1", "tau", "propensity"):
        assert np.array_equal(getattr(back, name), getattr(ihdp_draw, name)), name
    assert np.array_equal(back.covariates.values, ihdp_draw.covariates.values)
    assert back.covariates.column_kinds == ihdp_draw.covariates.column_kinds
    assert np.array_equal(back.test, ihdp_draw.test)
    assert back.draw_seed == ihdp_draw.draw_seed


def test_write_covariates_round_trip(tmp_path):
    X = synthesize_covariates(40, acic_like_profile(), 1)
    write_covariates(tmp_path / "c.csv", X)
    back = load_covariates(tmp_path / "c.csv")
    assert np.array_equal(back.values, X.values)
    assert back.column_kinds == X.column_kinds
