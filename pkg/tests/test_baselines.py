import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jmacate.baselines import (
    ZeroResidual,
    baseline_weights,
    information_scores,
    score_table,
    smoothed_weights,
    tecv_select,
)
from jmacate.jma import CandidateSpec, Dataset, JackknifeSystem, Term, cv_value, fit_jma, spec
from jmacate.matching import MatchedPairSet


def _pairs(M):
    return MatchedPairSet(np.arange(M), np.arange(M, 2 * M), tuple((0,) for _ in range(M)), 1.0, 0)


def test_hand_computed_aic_bic():
    # each arm: residuals +-1 around a line, rss = 10 over 10 observations, 2 coefficients
    x = np.arange(10.0)
    e = np.array([1, -1, -1, 1, 1, -1, -1, 1, 1, -1], float)
    U = np.column_stack([np.ones(10), x])
    e = e - U @ np.linalg.lstsq(U, e, rcond=None)[0]
    e *= math.sqrt(10.0 / (e @ e))
    X = np.concatenate([x, x])[:, None]
    T = np.repeat([True, False], 10)
    y = np.concatenate([1 + 2 * x + e, -x + e])
    aic, bic = information_scores(Dataset(X, T, y), spec(0, 0))
    assert aic == pytest.approx(68.7575413281869, rel=1e-12)
    assert bic == pytest.approx(70.57305188615118, rel=1e-12)


def test_identical_fits_identical_scores():
    rng = np.random.default_rng(0)
    d = Dataset(rng.normal(size=(40, 2)), np.arange(40) % 2 == 0, rng.normal(size=40))
    assert information_scores(d, spec(0, 0)) == information_scores(d, spec(7, 0))


def test_penalty_monotone_for_equal_rss():
    # u2 is orthogonal to the residuals of u1, so adding it leaves rss unchanged
    x1 = np.tile([0.0, 1.0, 2.0, 3.0], 4)
    x2 = np.repeat([1.0, -1.0, -1.0, 1.0], 4)
    rng = np.random.default_rng(1)
    y = 1 + x1 + np.tile(rng.normal(size=4), 4)
    X = np.column_stack([np.concatenate([x1, x1]), np.concatenate([x2, x2])])
    d = Dataset(X, np.repeat([True, False], 16), np.concatenate([y, y + 1]))
    small, big = information_scores(d, spec(0, 0)), information_scores(d, spec(1, 0, 1))
    assert big[0] > small[0] and big[1] > small[1]


def test_zero_residual_flagged():
    x = np.arange(8.0)
    d = Dataset(np.concatenate([x, x])[:, None], np.repeat([True, False], 8), np.concatenate([x, 2 * x]))
    with pytest.warns(ZeroResidual):
        assert information_scores(d, spec(0, 0)) == (-math.inf, -math.inf)


def test_smoothed_weights_examples():
    assert np.allclose(smoothed_weights([3.0, 3.0, 3.0, 3.0]).w, 0.25)
    assert np.allclose(smoothed_weights([0.0, 2.0]).w, [0.7310585786300049, 0.2689414213699951], rtol=1e-12)
    assert smoothed_weights([0.0, math.inf]).w.tolist() == [1.0, 0.0]
    assert smoothed_weights([5.0, -math.inf, 1.0]).w.tolist() == [0.0, 1.0, 0.0]
    assert np.allclose(smoothed_weights([0.0, 1e6]).w, [1.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=6), st.floats(-1e3, 1e3))
def test_smoothed_shift_invariance(scores, shift):
    a = smoothed_weights(scores).w
    b = smoothed_weights(np.array(scores) + shift).w
    assert np.allclose(a, b, atol=1e-12)


def test_tecv_select():
    y = np.array([1.0, 2.0, 3.0])
    D = np.column_stack([y + 1, y, y - 0.5])
    assert tecv_select(JackknifeSystem(D, y, _pairs(3))) == 1
    assert tecv_select(JackknifeSystem(D[:, :1], y, _pairs(3))) == 0
    rng = np.random.default_rng(0)
    for _ in range(20):
        D, y = rng.normal(size=(15, 5)), rng.normal(size=15)
        sys = JackknifeSystem(D, y, _pairs(15))
        vertex = [cv_value(np.eye(5)[k], sys) for k in range(5)]
        assert tecv_select(sys) == int(np.argmin(vertex))


def test_ties_break_to_smallest_index():
    y = np.array([1.0, 2.0])
    assert tecv_select(JackknifeSystem(np.column_stack([y, y]), y, _pairs(2))) == 0


def test_score_table_and_dominance():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(120, 3))
    T = rng.random(120) < 0.5
    y = X[:, 0] + T * X[:, 1] ** 2 + rng.normal(size=120) * (1 + np.abs(X[:, 1]))
    d = Dataset(X, T, y)
    specs = [spec(0, 0), spec(1, 1), spec(2, 0, 1), spec(3, 0, 1, 2)]
    jf = fit_jma(d, specs, np.random.default_rng(0))
    table = score_table(d, specs, jf.system)
    for k in range(4):
        assert table.tecv[k] == pytest.approx(cv_value(np.eye(4)[k], jf.system), rel=1e-12)
    assert jf.cv <= table.tecv.min() + 1e-12
    ws = baseline_weights(table)
    assert set(ws) == {"AIC", "BIC", "SAIC", "SBIC", "TECV"}
    # reordering candidates moves the AIC choice with them
    perm = [2, 0, 3, 1]
    table2 = score_table(d, [specs[i] for i in perm], jf.system)
    assert perm[table2.aic_choice] == table.aic_choice and perm[table2.bic_choice] == table.bic_choice
