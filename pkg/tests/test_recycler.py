import math

import numpy as np
import pytest

from recycle_nls import recycler
from recycle_nls.errors import DegenerateWeights, TooFewReplicates
from recycle_nls.models import MODEL1, Dataset
from recycle_nls.recycler import (
    P_SAMPLE,
    RecycleRun,
    confidence_interval,
    coverage_study,
    direction,
    pivot_r,
    pivot_r_star,
    recycled_cdf,
    run_recycle,
    sampling_distribution_sim,
    simulate_dataset,
    studentize,
)
from recycle_nls.stats import ks_vs_normal
from recycle_nls.weights import WeightScheme
from recycle_nls.wls_solver import Status, fit

from conftest import LINEAR

C = np.array([1.0, 1.0]) / math.sqrt(2)


def _linear_base():
    d = Dataset(np.ones(4), np.array([1.0, 2.0, 3.0, 4.0]))
    return d, fit(LINEAR, d, theta_start=[0.0])


def test_direction_requires_unit_norm():
    np.testing.assert_array_equal(direction([0.6, 0.8]), [0.6, 0.8])
    with pytest.raises(ValueError):
        direction([1.0, 1.0])


def test_pivot_r_examples():
    x = np.ones(4)
    assert pivot_r(LINEAR, x, [2.0], [2.0], [1.0]) == 0.0
    assert pivot_r(LINEAR, x, [2.5], [2.0], [1.0]) == pytest.approx(1.0, rel=1e-15)


def test_pivot_r_matches_direct_evaluation(model1_data):
    res = fit(MODEL1, model1_data)
    th0 = np.array([2.0, 0.04])
    # accumulate Sigma_n^{-1}(theta0) term by term
    S_inv = np.zeros((2, 2))
    for xi in model1_data.x:
        g = np.array([xi * math.exp(-th0[1] * xi), -th0[0] * xi * xi * math.exp(-th0[1] * xi)])
        S_inv += np.outer(g, g) / model1_data.n
    S = np.linalg.inv(S_inv)
    want = math.sqrt(150) * C @ (res.theta - th0) / math.sqrt(C @ S @ C)
    assert pivot_r(MODEL1, model1_data, res.theta, th0, C) == pytest.approx(want, rel=1e-10)


def test_pivot_r_star_examples():
    _, base = _linear_base()
    assert pivot_r_star(base, base.theta, 1.0, [1.0]) == 0.0
    assert pivot_r_star(base, base.theta + 0.5, 1.0, [1.0]) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(DegenerateWeights):
        pivot_r_star(base, base.theta, 0.0, [1.0])


def test_studentize():
    np.testing.assert_array_equal(studentize([1.0, -2.0], 2.0), [0.5, -1.0])
    np.testing.assert_array_equal(studentize([0.0, 3.0], 0.0), [0.0, np.inf])


def test_identity_weights_give_zero_pivot(model1_data, monkeypatch):
    monkeypatch.setattr(recycler, "draw_weight_matrix", lambda scheme, n, seed, ids, domain=(): np.ones((len(ids), n)))
    for B in (1, 5):
        run = run_recycle(MODEL1, model1_data, "exponential", B, C)
        assert np.all(run.ok)
        np.testing.assert_allclose(run.theta_star, np.tile(run.base.theta, (B, 1)), rtol=0, atol=1e-10)
        assert np.max(np.abs(run.r_star)) <= 1e-8


def test_run_recycle_deterministic_across_workers(model1_data):
    runs = [run_recycle(MODEL1, model1_data, "dirichlet:1", 700, C, seed=5, workers=w) for w in (1, 4, 8)]
    for r in runs[1:]:
        np.testing.assert_array_equal(r.r_star, runs[0].r_star)
        np.testing.assert_array_equal(r.theta_star, runs[0].theta_star)


def test_schemes_use_separate_streams(model1_data):
    a = run_recycle(MODEL1, model1_data, "dirichlet:1", 20, C)
    b = run_recycle(MODEL1, model1_data, "exponential", 20, C)
    assert not np.array_equal(a.r_star, b.r_star)


def test_run_recycle_fields(model1_data):
    run = run_recycle(MODEL1, model1_data, "multinomial", 300, C, seed=1)
    assert run.B == 300 and run.tau == math.sqrt(149 / 150)
    resid = model1_data.y - MODEL1.f(model1_data.x, run.theta_star)
    np.testing.assert_allclose(run.sigma_star, np.sqrt((resid ** 2).sum(axis=1) / 148), rtol=1e-14)
    np.testing.assert_allclose(run.r_star, pivot_r_star(run.base, run.theta_star, run.tau, C), rtol=1e-14)
    np.testing.assert_array_equal(run.r_star_stud, run.r_star / run.base.sigma_hat)
    assert not run.unreliable


def test_small_multinomial_samples_flag_degenerate_replicates():
    x = np.linspace(1, 10, 3)
    d = Dataset(x, MODEL1.f(x, np.array([2.0, 0.04])) + np.array([0.1, -0.2, 0.1]))
    run = run_recycle(MODEL1, d, "multinomial", 400, C, theta_start=[2.0, 0.04])
    deg = run.flags == Status.DEGENERATE
    assert deg.any()
    assert run.unreliable
    assert run.pivots().size == 400 - run.n_excluded


def test_recycled_cdf_examples():
    _, base = _linear_base()
    theta_star = base.theta + np.array([[-1.0], [0.0], [2.0]])
    r = pivot_r_star(base, theta_star, 1.0, [1.0])
    run = RecycleRun(base, WeightScheme("exponential"), np.array([1.0]), 1.0, 0, theta_star,
                     np.ones(3), r, studentize(r, base.sigma_hat), np.zeros(3, dtype=np.int8))
    assert recycled_cdf(run, -100) == 0.0
    assert recycled_cdf(run, r.max()) == 1.0
    assert recycled_cdf(run, 0.0) == pytest.approx(2 / 3)


def _manual_run(base, offsets):
    theta_star = base.theta + np.asarray(offsets)[:, None] * np.ones(base.p)
    r = pivot_r_star(base, theta_star, 1.0, np.ones(base.p) / math.sqrt(base.p))
    return RecycleRun(base, WeightScheme("exponential"), np.ones(base.p) / math.sqrt(base.p), 1.0, 0,
                      theta_star, np.ones(len(offsets)), r, studentize(r, base.sigma_hat),
                      np.zeros(len(offsets), dtype=np.int8))


def test_ci_degenerate_and_symmetric(model1_data):
    base = fit(MODEL1, model1_data)
    ci = confidence_interval(_manual_run(base, np.zeros(60)), 0)
    assert ci.lower == ci.upper == base.theta[0]
    ci = confidence_interval(_manual_run(base, np.linspace(-0.1, 0.1, 81)), 1, 0.9)
    assert ci.upper - base.theta[1] == pytest.approx(base.theta[1] - ci.lower, rel=1e-12)
    with pytest.raises(TooFewReplicates):
        confidence_interval(_manual_run(base, np.zeros(49)), 0)


def test_ci_translation_equivariance():
    rng = np.random.default_rng(77)
    x = rng.uniform(0, 10, 40)
    eps = rng.normal(0, 0.5, 40)
    out = []
    for th0 in (1.3, 1.3 + 2.75):
        run = run_recycle(LINEAR, Dataset(x, th0 * x + eps), "exponential", 200, [1.0], seed=3, theta_start=[0.0])
        out.append(confidence_interval(run, 0))
    assert out[1].lower - out[0].lower == pytest.approx(2.75, abs=1e-9)
    assert out[1].upper - out[0].upper == pytest.approx(2.75, abs=1e-9)


def test_coverage_noise_free_is_exact():
    rep = coverage_study(MODEL1, [2.0, 0.04], 30, "multinomial", 60, 3, noise_sd=0.0)
    np.testing.assert_array_equal(rep.coverage, [1.0, 1.0])
    np.testing.assert_array_equal(rep.lower, np.tile([2.0, 0.04], (3, 1)))


def test_coverage_smoke():
    rep = coverage_study(MODEL1, [2.0, 0.04], 50, "exponential", 100, 8, seed=2, workers=3)
    assert rep.used + rep.dropped == 8
    assert np.all((rep.coverage >= 0) & (rep.coverage <= 1))
    assert np.all(rep.upper >= rep.lower)
    rep2 = coverage_study(MODEL1, [2.0, 0.04], 50, "exponential", 100, 8, seed=2, workers=1)
    np.testing.assert_array_equal(rep.lower, rep2.lower)


def test_simdist_examples():
    sim = sampling_distribution_sim(MODEL1, [2.0, 0.04], 30, C, 5, noise_sd=0.0)
    np.testing.assert_array_equal(sim.r, np.zeros(5))
    np.testing.assert_array_equal(sim.r_stud, np.zeros(5))
    a = sampling_distribution_sim(MODEL1, [2.0, 0.04], 30, C, 1, seed=4)
    b = sampling_distribution_sim(MODEL1, [2.0, 0.04], 30, C, 1, seed=4)
    assert a.r.size == 1 and np.isfinite(a.r[0]) and a.r[0] == b.r[0]


def test_simulated_design_and_noise_streams():
    d1 = simulate_dataset(MODEL1, [2.0, 0.04], 20, 0.25, 0, 3)
    d2 = simulate_dataset(MODEL1, [2.0, 0.04], 20, 0.0, 0, 3)
    np.testing.assert_array_equal(d1.x, d2.x)
    assert np.all((d1.x >= 0) & (d1.x <= 10))
    np.testing.assert_array_equal(d2.y, MODEL1.f(d2.x, np.array([2.0, 0.04])))


@pytest.mark.parametrize("scheme", ["multinomial", "dirichlet:1", "exponential"])
def test_studentized_replicates_close_to_normal(scheme):
    d = simulate_dataset(MODEL1, [2.0, 0.04], 150, 0.25, 0, 150, P_SAMPLE)
    run = run_recycle(MODEL1, d, scheme, 10_000, C, theta_start=[2.0, 0.04], domain=(P_SAMPLE, 150))
    assert ks_vs_normal(run.pivots()) <= 0.03
