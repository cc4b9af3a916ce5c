import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recycle_nls.errors import DegenerateWeights
from recycle_nls.weights import (
    RngStream,
    WeightScheme,
    WeightVector,
    assumption_w_report,
    draw_weight_matrix,
    draw_weights,
    parse_scheme,
    standardize,
)

SCHEMES = ["multinomial", "dirichlet:1", "exponential"]


def test_parse_and_tau():
    assert parse_scheme("Dirichlet:2.5") == WeightScheme("dirichlet", 2.5)
    assert parse_scheme("dirichlet") == WeightScheme("dirichlet", 1.0)
    assert str(parse_scheme("dirichlet")) == "dirichlet:1"
    with pytest.raises(ValueError):
        parse_scheme("exponential:2")
    with pytest.raises(ValueError):
        parse_scheme("poisson")
    assert WeightScheme("multinomial").tau(100) == math.sqrt(0.99)
    assert WeightScheme("dirichlet").tau(100) == math.sqrt(99 / 101)
    assert WeightScheme("dirichlet", 4.0).tau(10) == math.sqrt(9 / 41)
    assert WeightScheme("exponential").tau(5) == 1.0


def test_multinomial_n1_is_degenerate():
    wv = draw_weights("multinomial", 1, RngStream(0))
    np.testing.assert_array_equal(wv.w, [1.0])
    assert wv.tau == 0.0 and wv.degenerate
    with pytest.raises(DegenerateWeights):
        standardize(wv)


def test_dirichlet_n2_lies_on_simplex():
    u = []
    for s in range(2000):
        w = draw_weights("dirichlet:1", 2, RngStream(3, s)).w
        assert w.sum() == pytest.approx(2.0, abs=1e-12)
        u.append(w[0] / 2)
    # first coordinate uniform on (0, 1): compare with the uniform CDF
    u = np.sort(u)
    assert np.max(np.abs(np.arange(1, 2001) / 2000 - u)) < 0.04


def test_multinomial_marginal_variance():
    w = draw_weights("multinomial", 10_000, RngStream(1)).w
    ratio = w.var(ddof=1) / ((10_000 - 1) / 10_000)
    assert 0.9 <= ratio <= 1.1


def test_standardize_examples():
    s = WeightScheme("exponential")
    np.testing.assert_array_equal(standardize(WeightVector(np.ones(4), 1.0, s)), np.zeros(4))
    np.testing.assert_array_equal(standardize(WeightVector(np.array([0.0, 2.0]), 1.0, s)), [-1.0, 1.0])


@pytest.mark.parametrize("scheme", SCHEMES)
def test_sum_invariants_and_nonnegativity(scheme):
    for s in range(200):
        w = draw_weights(scheme, 37, RngStream(9, s)).w
        assert np.all(w >= 0)
        if scheme == "multinomial":
            assert w.sum() == 37.0
        elif scheme.startswith("dirichlet"):
            assert abs(w.sum() - 37) <= 1e-9


@pytest.mark.parametrize("scheme", SCHEMES)
def test_exchangeability(scheme):
    n = 20
    W = draw_weight_matrix(scheme, n, 4, range(10_000))
    a, b = W[:, 0], W[:, n // 2 - 1]
    se_mean = math.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) <= 3 * se_mean
    # variance of the sample variance via fourth central moments
    def var_se(v):
        m2 = v.var()
        m4 = np.mean((v - v.mean()) ** 4)
        return (m4 - m2 * m2) / v.size
    assert abs(a.var() - b.var()) <= 3 * math.sqrt(var_se(a) + var_se(b))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(SCHEMES), st.integers(1, 60), st.integers(0, 2**63), st.integers(0, 10**6))
def test_streams_are_reproducible(scheme, n, seed, sid):
    a = draw_weights(scheme, n, RngStream(seed, sid)).w
    b = draw_weights(scheme, n, RngStream(seed, sid)).w
    np.testing.assert_array_equal(a, b)


def test_streams_independent_of_thread_count():
    ids = list(range(64))
    ref = draw_weight_matrix("dirichlet:1", 25, 17, ids)
    for workers in (4, 8):
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda i: draw_weights("dirichlet:1", 25, RngStream(17, i)).w, ids))
        np.testing.assert_array_equal(np.stack(rows), ref)


def test_distinct_streams_differ():
    a = draw_weights("exponential", 10, RngStream(1, 1)).w
    assert not np.array_equal(a, draw_weights("exponential", 10, RngStream(1, 2)).w)
    assert not np.array_equal(a, draw_weights("exponential", 10, RngStream(2, 1)).w)
    assert not np.array_equal(a, draw_weights("exponential", 10, RngStream(1, 1, (5,))).w)


def test_exponential_cross_moment_is_zero():
    r = assumption_w_report("exponential", 50, 4000, seed=3)
    assert abs(r.cross) <= 3 * r.cross_se


def test_moment_report_multinomial_n100():
    r = assumption_w_report("multinomial", 100, 10_000)
    assert abs(r.mean_w) <= 0.05
    assert abs(r.mean_w2 - 1) <= 0.05
    assert r.multinomial_sum_exact is True


def test_moment_report_dirichlet_centered():
    r = assumption_w_report("dirichlet:1", 1000, 10_000)
    assert abs(r.centered_w2 - 1) <= 0.05


@pytest.mark.parametrize("scheme", SCHEMES)
def test_second_moment_deviation_shrinks_with_n(scheme):
    reps = [assumption_w_report(scheme, n, 10_000, seed=21) for n in (100, 1000, 10_000)]
    dev = [abs(r.mean_w2 - 1) for r in reps]
    for (d0, r0), (d1, r1) in zip(zip(dev, reps), zip(dev[1:], reps[1:])):
        assert d1 <= d0 + r1.mean_w2_se
