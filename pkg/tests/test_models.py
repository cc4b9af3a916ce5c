import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recycle_nls.errors import DomainError
from recycle_nls.models import (
    CHWIRUT1,
    MODEL1,
    MODEL2,
    Dataset,
    RegressionModel,
    eval_model,
    fd_gradient,
    get_model,
    grad_model,
    hess_model,
    model_from_expression,
    register_model,
)

CHW_HAT = np.array([0.1903, 0.0061, 0.0105])


def _const(x, th):
    return np.zeros(th.shape[:-1] + np.shape(x)[-1:]) + 3.0


CONST = RegressionModel("const-test", 2, _const, None, None)


def test_eval_examples():
    assert eval_model(MODEL1, 0.0, [2, 0.04]) == 0.0
    assert eval_model(MODEL2, 1.0, [10, 0]) == 5.0
    # 1/0.0061 evaluated in 30-digit arithmetic
    assert eval_model(CHWIRUT1, 0.0, CHW_HAT) == pytest.approx(163.93442622950819672, rel=1e-14)


def test_chwirut_zero_denominator_is_domain_error():
    with pytest.raises(DomainError):
        eval_model(CHWIRUT1, 0.0, [0.1, 0.0, 0.0])


def test_wrong_parameter_count():
    with pytest.raises(ValueError):
        eval_model(MODEL1, 1.0, [1.0, 2.0, 3.0])


def test_grad_examples():
    np.testing.assert_array_equal(grad_model(MODEL1, 0.0, [2, 0.04]), [0, 0])
    np.testing.assert_allclose(grad_model(MODEL1, 1.0, [2, 0]), [1, -2], rtol=0, atol=1e-15)
    np.testing.assert_allclose(grad_model(MODEL2, 2.0, [10, 0]), [2 / 3, -20 / 9], rtol=1e-15)
    np.testing.assert_allclose(fd_gradient(MODEL2, 2.0, [10, 0]), [2 / 3, -20 / 9], rtol=1e-8)


def test_chwirut_grad_symbolic_oracle():
    # derivatives taken symbolically (sympy) and evaluated to 20 digits
    want = [-45.121710534537534359, -400.01516431327601382, -1200.0454929398280415]
    th = [0.19, 0.0061, 0.0105]
    np.testing.assert_allclose(grad_model(CHWIRUT1, 3.0, th), want, rtol=1e-13)
    g = grad_model(CHWIRUT1, 3.0, th)
    assert np.max(np.abs(fd_gradient(CHWIRUT1, 3.0, th) - g)) <= 1e-6 * np.max(np.abs(g))


def test_fd_gradient_examples():
    np.testing.assert_allclose(fd_gradient(MODEL1, 1.0, [2, 0], 1e-6), [1, -2], atol=1e-6)
    np.testing.assert_array_equal(fd_gradient(CONST, 0.7, [1.0, -4.0]), [0.0, 0.0])
    with pytest.raises(ValueError):
        fd_gradient(MODEL1, 1.0, [2, 0], 0.0)


@pytest.mark.parametrize(
    "model, center, spread, xs",
    [
        (MODEL1, [2.0, 0.04], [1.0, 0.05], np.linspace(0, 10, 11)),
        (MODEL2, [10.0, 0.0], [3.0, 1.0], np.linspace(0, 10, 11)),
        (CHWIRUT1, [0.19, 0.0061, 0.0105], [0.05, 0.002, 0.003], np.linspace(0.5, 6, 12)),
    ],
)
def test_grad_matches_finite_differences(model, center, spread, xs):
    rng = np.random.default_rng(11)
    for _ in range(100):
        th = np.asarray(center) + rng.uniform(-1, 1, len(center)) * spread
        for x in xs:
            g = grad_model(model, x, th)
            err = np.max(np.abs(g - fd_gradient(model, x, th, 1e-6)))
            assert err / (1 + np.max(np.abs(g))) <= 1e-6


@pytest.mark.parametrize("model, th", [(MODEL1, [2.0, 0.04]), (MODEL2, [10.0, 0.3])])
def test_analytic_hessian_matches_fd_of_grad(model, th):
    for x in (0.5, 3.0, 9.0):
        H = hess_model(model, x, th)
        h = 1e-6
        fd = np.stack([(grad_model(model, x, np.add(th, h * e)) - grad_model(model, x, np.subtract(th, h * e))) / (2 * h)
                       for e in np.eye(2)])
        np.testing.assert_allclose(H, fd, rtol=1e-6, atol=1e-7)
        np.testing.assert_array_equal(H, H.T)


def test_chwirut_hessian_by_differences_is_symmetric():
    H = hess_model(CHWIRUT1, 2.0, [0.19, 0.0061, 0.0105])
    np.testing.assert_array_equal(H, H.T)
    assert np.all(np.isfinite(H))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10), st.floats(-100, 100))
def test_model2_at_zero_is_michaelis_menten(x, t1):
    assert eval_model(MODEL2, x, [t1, 0.0]) == pytest.approx(t1 * x / (1 + x), rel=1e-14, abs=1e-300)


def test_eval_is_bitwise_deterministic():
    a = [eval_model(m, 2.5, m.start) for m in (MODEL1, MODEL2, CHWIRUT1)]
    b = [eval_model(m, 2.5, m.start) for m in (MODEL1, MODEL2, CHWIRUT1)]
    assert a == b


def test_batched_shapes():
    x = np.linspace(0, 10, 7)
    th = np.tile(MODEL1.start, (4, 1))
    assert MODEL1.f(x, th).shape == (4, 7)
    assert MODEL1.jac(x, th).shape == (4, 7, 2)
    assert MODEL1.hessian(x, th).shape == (4, 7, 2, 2)


def test_admissible_boxes():
    assert MODEL1.admissible([2, 0.04]) and not MODEL1.admissible([2, 6])
    assert MODEL2.admissible([10, -9.5]) and not MODEL2.admissible([101, 0])
    assert CHWIRUT1.admissible([0.1, 0.01, 0.02]) and not CHWIRUT1.admissible([0.1, -0.01, 0.02])


def test_registry_and_expression_model():
    assert get_model("Model1") is MODEL1
    with pytest.raises(KeyError):
        get_model("nope")
    m = model_from_expression("expo-test", "theta[0] * exp(theta[1] * x)", 2, start=[1.0, 0.1])
    register_model(m, replace=True)
    assert get_model("expo-test") is m
    np.testing.assert_allclose(grad_model(m, 2.0, [1.5, 0.1]), [np.exp(0.2), 2 * 1.5 * np.exp(0.2)], rtol=1e-8)
    with pytest.raises(ValueError):
        model_from_expression("bad", "__import__('os')", 1)
    with pytest.raises(ValueError):
        register_model(MODEL1)


def test_dataset_validation():
    d = Dataset([1, 2], [3, 4])
    assert d.n == 2
    with pytest.raises(ValueError):
        d.x[0] = 5
    for bad in (([], []), ([1, 2], [1]), ([1, np.nan], [1, 2]), ([[1]], [[1]])):
        with pytest.raises(ValueError):
            Dataset(*bad)
