import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bois import gp
from bois.bo import (
    BayesOptimizer,
    BoundsBox,
    OptimizerStateError,
    acquisition_lcb,
    batched_nelder_mead,
    kappa,
    lhs_sample,
    lhs_then_bo,
    minimize_lcb,
)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6), st.integers(0, 2**31))
def test_lhs_one_point_per_stratum(M, d, seed):
    bounds = BoundsBox(np.full(d, -1.0), np.full(d, 3.0))
    X = lhs_sample(M, bounds, np.random.default_rng(seed))
    assert X.shape == (M, d)
    assert bounds.contains(X)
    strata = np.floor((X - bounds.lo) / (bounds.hi - bounds.lo) * M).clip(0, M - 1)
    for j in range(d):
        assert sorted(strata[:, j]) == list(range(M))


def test_lhs_rejects_empty():
    with pytest.raises(ValueError):
        lhs_sample(0, BoundsBox.angles(2), np.random.default_rng(0))


def test_bounds_box_validation():
    with pytest.raises(ValueError):
        BoundsBox([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        BoundsBox([0.0], [1.0, 2.0])
    b = BoundsBox.angles(3)
    assert b.d == 3 and np.allclose(b.hi, 2 * np.pi)


def test_kappa_schedule():
    assert kappa(30, 30, 2.0) == 0.0
    assert kappa(1, 30, 2.0) == pytest.approx(2.0 * 29 / 30)
    values = [kappa(t, 30, 2.0) for t in range(1, 31)]
    assert all(a > b for a, b in zip(values, values[1:]))
    with pytest.raises(ValueError):
        kappa(0, 30, 2.0)
    with pytest.raises(ValueError):
        kappa(31, 30, 2.0)


def _quadratic_model(noise=1e-8):
    X = np.linspace(0.2, 2 * np.pi - 0.2, 9)[:, None]
    return gp.fit(X, (X[:, 0] - np.pi) ** 2, fixed_noise=noise, rng=np.random.default_rng(0))


def test_lcb_with_zero_kappa_is_the_mean():
    model = _quadratic_model()
    for t in (0.5, 2.0, 4.4):
        assert acquisition_lcb(model, [t], 0.0) == model.predict([t])[0]


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0, 5), st.floats(0, 5))
def test_lcb_monotone_in_kappa(theta, k1, k2):
    model = _quadratic_model()
    lo, hi = sorted((k1, k2))
    assert acquisition_lcb(model, [theta], hi) <= acquisition_lcb(model, [theta], lo) + 1e-12


def test_lcb_rejects_negative_kappa():
    with pytest.raises(ValueError):
        acquisition_lcb(_quadratic_model(), [1.0], -0.1)


def test_proposal_lands_on_the_surrogate_minimum():
    model = _quadratic_model()
    grid = np.linspace(0, 2 * np.pi, 20001)[:, None]
    scan = grid[np.argmin(model.predict_many(grid)[0]), 0]
    theta = minimize_lcb(model, BoundsBox.angles(1), 0.0, np.random.default_rng(1))
    assert abs(theta[0] - scan) < 1e-3
    assert abs(theta[0] - np.pi) < 0.1


def test_batched_nelder_mead_respects_budget_and_bounds():
    calls = []
    target = np.array([0.3, 5.9])

    def f(X):
        calls.append(len(X))
        return ((X - target) ** 2).sum(1)

    b = BoundsBox.angles(2)
    starts = np.array([[1.0, 1.0], [3.0, 3.0], [6.0, 0.5]])
    xs, fs = batched_nelder_mead(f, starts, b, max_evals=200)
    assert b.contains(xs)
    assert np.all(fs < 1e-6)
    # each simplex spends at most the budget
    assert sum(calls) <= 200 * len(starts)


def test_batched_nelder_mead_reaches_a_box_corner():
    f = lambda X: X.sum(1)
    b = BoundsBox([0.0, 0.0], [1.0, 1.0])
    xs, fs = batched_nelder_mead(f, np.array([[0.5, 0.5]]), b, 200)
    assert np.allclose(xs, 0.0, atol=1e-3) and b.contains(xs)


def test_optimizer_state_errors():
    opt = BayesOptimizer(BoundsBox.angles(1), 3, rng=np.random.default_rng(0))
    with pytest.raises(OptimizerStateError):
        opt.propose()
    with pytest.raises(OptimizerStateError):
        opt.best_point()
    with pytest.raises(ValueError):
        opt.ingest([([7.0], 1.0)])
    with pytest.raises(ValueError):
        opt.ingest([([1.0], math.nan)])
    with pytest.raises(ValueError):
        opt.ingest([([1.0, 2.0], 1.0)])
    with pytest.raises(ValueError):
        BayesOptimizer(BoundsBox.angles(1), 0)


def test_optimizer_refuses_after_last_iteration():
    opt = lhs_then_bo(lambda x: float(np.sum(x)), BoundsBox.angles(1), 3, 2, np.random.default_rng(0))
    assert opt.t == 2
    with pytest.raises(OptimizerStateError):
        opt.propose()


def test_duplicates_allowed_and_best_point_earliest():
    opt = BayesOptimizer(BoundsBox.angles(1), 5, rng=np.random.default_rng(0))
    opt.ingest([([1.0], 0.5), ([1.0], 0.5), ([2.0], 0.7)])
    theta, cost = opt.best_point()
    assert cost == 0.5 and theta[0] == 1.0 and opt.n_data == 3
    assert opt.propose().shape == (1,)


def test_refit_schedule():
    opt = BayesOptimizer(BoundsBox.angles(1), 20, rng=np.random.default_rng(0), fixed_noise=1e-8)
    rng = np.random.default_rng(1)
    opt.ingest((x, float(np.cos(x[0]))) for x in rng.uniform(0, 6, (120, 1)))
    params = []
    for t in range(1, 8):
        opt.propose()
        params.append(opt.model.params)
        opt.ingest([(rng.uniform(0, 6, 1), 0.0)])
        opt.t = t
    # beyond 100 points hyperparameters change only when t is a multiple of 5
    assert opt.n_fits == 2  # t = 0 and t = 5
    assert params[1] == params[2] == params[3] == params[4]


def test_one_dimensional_quadratic_converges():
    hits = 0
    for seed in range(10):
        opt = lhs_then_bo(lambda x: float((x[0] - np.pi) ** 2), BoundsBox.angles(1), 5, 15, np.random.default_rng(seed), fixed_noise=1e-8)
        hits += opt.best_point()[1] < 1e-2
    assert hits == 10


def test_bo_is_deterministic_given_the_stream():
    f = lambda x: float(np.sin(x).sum())
    a = lhs_then_bo(f, BoundsBox.angles(2), 4, 5, np.random.default_rng(3))
    b = lhs_then_bo(f, BoundsBox.angles(2), 4, 5, np.random.default_rng(3))
    assert np.array_equal(np.array(a.X), np.array(b.X))
