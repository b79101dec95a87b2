import numpy as np
import pytest

from jmacate.dgp import (
    SimConfig,
    TrueEffect,
    ase,
    calibrate_c,
    default_candidates,
    draw_covariates,
    empirical_r2,
    error_sd,
    f_control,
    f_treated,
    generate_example1,
    generate_nswd_like,
    oracle_weights,
)
from jmacate.errors import DimensionMismatch
from jmacate.jma import Dataset, delta_hat, fit_arms

from oracles import grid_min


def test_true_effect_is_arm_difference():
    U = np.random.default_rng(0).normal(size=(50, 4))
    assert np.allclose(TrueEffect(1.7)(U), f_treated(U, 1.7) - f_control(U, 1.7))
    assert TrueEffect(3.0)(np.zeros(4))[0] == 0.0


def test_null_signal():
    draw = generate_example1(SimConfig(n=100, c=0.0, n_eval=10), np.random.default_rng(0))
    assert np.all(draw.truth == 0) and np.all(draw.eval_truth == 0)
    sd_t, sd_c = error_sd(draw.dataset.X, 1)
    # pure noise: standardised responses look standard normal
    z = draw.dataset.y / sd_t
    assert abs(z.mean()) < 0.4 and 0.6 < z.std() < 1.4


def test_covariance_identity_at_rho_zero():
    U = draw_covariates(100_000, 0.0, np.random.default_rng(1))
    assert np.allclose(np.cov(U.T), np.eye(4), atol=0.02)
    U = draw_covariates(100_000, 0.5, np.random.default_rng(1))
    assert np.cov(U.T)[0, 2] == pytest.approx(0.25, abs=0.02)


def test_design1_variance_near_u2_one():
    cfg = SimConfig(n=1_000_000, c=0.0, design=1, n_eval=1)
    draw = generate_example1(cfg, np.random.default_rng(2))
    u2 = draw.dataset.X[:, 1]
    band = np.abs(np.abs(u2) - 1.0) < 0.01
    assert np.var(draw.dataset.y[band]) == pytest.approx(9.0, rel=0.05)


@pytest.mark.parametrize("design,arm,col,scale", [(1, True, 1, 9.0), (1, False, 1, 9.0),
                                                  (2, True, 1, 16.0), (2, False, 0, 4.0)])
def test_heteroscedastic_moments_binned(design, arm, col, scale):
    draw = generate_example1(SimConfig(n=1_000_000, c=0.0, design=design, n_eval=1), np.random.default_rng(3))
    X, T, y = draw.dataset.X, draw.dataset.T, draw.dataset.y
    u = X[T == arm, col]
    e2 = y[T == arm] ** 2
    edges = np.linspace(-1.5, 1.5, 7)
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (u >= lo) & (u < hi)
        assert e2[m].mean() == pytest.approx(scale * (u[m] ** 2).mean(), rel=0.05)


def test_seeded_determinism_and_linearity_in_c():
    a = generate_example1(SimConfig(n=50, c=1.5), np.random.default_rng(7))
    b = generate_example1(SimConfig(n=50, c=1.5), np.random.default_rng(7))
    assert np.array_equal(a.dataset.y, b.dataset.y) and np.array_equal(a.eval_points, b.eval_points)
    c2 = generate_example1(SimConfig(n=50, c=3.0), np.random.default_rng(7))
    assert np.array_equal(c2.truth, 2 * a.truth) and np.array_equal(c2.eval_truth, 2 * a.eval_truth)


def test_calibration_small_target_and_monotone():
    assert calibrate_c(0.001, 0.0, 1, n_mc=200_000) < 0.2
    assert calibrate_c(0.9, 0.0, 1, n_mc=200_000) > calibrate_c(0.3, 0.0, 1, n_mc=200_000)


def test_calibration_round_trip():
    c = calibrate_c(0.6, 0.5, 2)
    assert empirical_r2(c, 0.5, 2, 1_000_000, np.random.default_rng(99)) == pytest.approx(0.6, abs=1e-2)


def test_ase_examples():
    assert ase([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert ase(np.arange(5.0) + 0.5, np.arange(5.0)) == pytest.approx(0.25)
    assert ase([1.0, 3.0], [0.0, 0.0]) == 5.0
    with pytest.raises(DimensionMismatch):
        ase([1.0], [1.0, 2.0])
    rng = np.random.default_rng(0)
    e, t = rng.normal(size=30), rng.normal(size=30)
    p = rng.permutation(30)
    assert ase(e[p], t[p]) == pytest.approx(ase(e, t), rel=1e-14)


def test_oracle_weights():
    t = np.linspace(-1, 1, 20)
    E = np.column_stack([t + 1, t, t ** 2])
    res = oracle_weights(E, t)
    assert np.allclose(res.weights.w, [0, 1, 0], atol=1e-12) and res.normalizer_zero
    assert oracle_weights(E[:, :1], t).weights.w.tolist() == [1.0]
    rng = np.random.default_rng(4)
    for _ in range(5):
        E, t = rng.normal(size=(40, 3)), rng.normal(size=40)
        res = oracle_weights(E, t)
        assert 40 * res.ase <= grid_min(E, t) + 1e-6
        assert not res.normalizer_zero


def test_candidate_sets():
    for ex in (1, 2):
        assert len(default_candidates(ex)) == 4
    rng = np.random.default_rng(5)
    U = rng.normal(size=(200, 4))
    T = rng.random(200) < 0.5
    y = np.where(T, f_treated(U, 2.0), f_control(U, 2.0))
    d = Dataset(U, T, y)
    pts = rng.normal(size=(30, 4))
    correct = default_candidates(2)[0]
    assert np.allclose(delta_hat(d, correct, pts), TrueEffect(2.0)(pts), atol=1e-9)


def test_example1_candidates_misspecified():
    rng = np.random.default_rng(6)
    U = rng.normal(size=(200_000, 4))
    T = rng.random(200_000) < 0.5
    d = Dataset(U, T, np.where(T, f_treated(U, 1.0), f_control(U, 1.0)))
    pts = rng.normal(size=(20_000, 4))
    truth = TrueEffect(1.0)(pts)
    for s in default_candidates(1):
        assert ase(fit_arms(d, s).delta(pts), truth) > 0.1


def test_nswd_stand_in_shape():
    d, names = generate_nswd_like(np.random.default_rng(0))
    assert d.n == 722 and d.T.sum() == 297 and (~d.T).sum() == 425 and len(names) == 4
