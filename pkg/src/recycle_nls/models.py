"""Nonlinear mean functions f(x; theta) with derivatives in theta.

All model callables share one broadcasting convention: ``x`` has shape
``(n,)`` (or ``(B, n)`` for per-row designs) and ``theta`` has shape
``(..., p)``.  Values come back with shape ``(..., n)``, gradients with
``(..., n, p)`` and Hessians with ``(..., n, p, p)``.  This lets the solver
evaluate a whole batch of replicate parameter vectors in one call.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "Dataset",
    "RegressionModel",
    "MODEL1",
    "MODEL2",
    "CHWIRUT1",
    "get_model",
    "register_model",
    "model_from_expression",
    "eval_model",
    "grad_model",
    "hess_model",
    "fd_gradient",
    "fd_jacobian",
]

ArrayFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Dataset:
    """Fixed design points ``x`` with responses ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        if x.ndim != 1 or y.ndim != 1:
            raise ValueError("x and y must be one-dimensional")
        if x.shape != y.shape:
            raise ValueError(f"x and y lengths differ ({x.size} vs {y.size})")
        if x.size < 1:
            raise ValueError("a dataset needs at least one observation")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.x.size)


def _cols(theta: np.ndarray, p: int):
    """Split ``theta[..., p]`` into p arrays shaped ``(..., 1)`` for broadcasting against x."""
    return [theta[..., j, None] for j in range(p)]


def _fd_steps(theta: np.ndarray, rel: float) -> np.ndarray:
    return rel * (1.0 + np.abs(theta))


def fd_jacobian(func: ArrayFn, x, theta, h=None) -> np.ndarray:
    """Central-difference gradient of ``func`` in theta, shape ``(..., n, p)``.

    ``h`` may be a scalar or a per-coordinate array broadcastable to theta;
    by default ``1e-6 * (1 + |theta_j|)``.
    """
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[-1]
    h = _fd_steps(theta, 1e-6) if h is None else np.broadcast_to(np.asarray(h, float), theta.shape)
    cols = []
    for j in range(p):
        e = np.zeros(p)
        e[j] = 1.0
        hj = h[..., j, None]
        up = func(x, theta + hj * e)
        dn = func(x, theta - hj * e)
        step = h[..., j].reshape(theta.shape[:-1] + (1,) * (np.ndim(up) - theta.ndim + 1))
        cols.append((up - dn) / (2.0 * step))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class RegressionModel:
    """A mean function with its gradient, optional Hessian and admissible box.

    ``lower``/``upper`` bound the parameter box that stands in for the compact
    parameter space; iterates of the solver are projected onto it.
    """

    name: str
    p: int
    func: ArrayFn
    grad: ArrayFn | None = None
    hess: ArrayFn | None = None
    lower: np.ndarray = field(default=None)
    upper: np.ndarray = field(default=None)
    start: np.ndarray | None = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("parameter dimension must be >= 1")
        lo = np.full(self.p, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.p, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if lo.shape != (self.p,) or hi.shape != (self.p,) or np.any(lo > hi):
            raise ValueError(f"invalid parameter box for model {self.name!r}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.start is not None:
            object.__setattr__(self, "start", np.asarray(self.start, float))

    # vectorised kernels -------------------------------------------------

    def f(self, x, theta) -> np.ndarray:
        with np.errstate(all="ignore"):
            return self.func(np.asarray(x, float), np.asarray(theta, float))

    def jac(self, x, theta) -> np.ndarray:
        x = np.asarray(x, float)
        theta = np.asarray(theta, float)
        with np.errstate(all="ignore"):
            if self.grad is None:
                return fd_jacobian(self.func, x, theta)
            return self.grad(x, theta)

    def hessian(self, x, theta) -> np.ndarray:
        """Analytic Hessian when supplied, else central differences of the gradient."""
        x = np.asarray(x, float)
        theta = np.asarray(theta, float)
        with np.errstate(all="ignore"):
            if self.hess is not None:
                return self.hess(x, theta)
            # cube root of machine epsilon balances truncation against rounding
            h = _fd_steps(theta, 6e-6)
            H = fd_jacobian(self.jac, x, theta, h)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def admissible(self, theta) -> bool:
        theta = np.asarray(theta, float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def project(self, theta) -> np.ndarray:
        return np.clip(theta, self.lower, self.upper)


# built-in models ---------------------------------------------------------


def _m1_f(x, th):
    t1, t2 = _cols(th, 2)
    return t1 * x * np.exp(-t2 * x)


def _m1_g(x, th):
    t1, t2 = _cols(th, 2)
    e = np.exp(-t2 * x)
    d1 = x * e
    d2 = -t1 * x * x * e
    d1, d2 = np.broadcast_arrays(d1, d2)
    return np.stack([d1, d2], axis=-1)


def _m1_h(x, th):
    t1, t2 = _cols(th, 2)
    e = np.exp(-t2 * x)
    h11 = np.zeros_like(t1 * x)
    h12 = -x * x * e
    h22 = t1 * x**3 * e
    h11, h12, h22 = np.broadcast_arrays(h11, h12, h22)
    return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)


def _m2_f(x, th):
    t1, t2 = _cols(th, 2)
    return t1 * x / (np.exp(t2) + x)


def _m2_g(x, th):
    t1, t2 = _cols(th, 2)
    E = np.exp(t2)
    D = E + x
    d1 = x / D
    d2 = -t1 * x * E / (D * D)
    d1, d2 = np.broadcast_arrays(d1, d2)
    return np.stack([d1, d2], axis=-1)


def _m2_h(x, th):
    t1, t2 = _cols(th, 2)
    E = np.exp(t2)
    D = E + x
    h11 = np.zeros_like(t1 * x)
    h12 = -x * E / (D * D)
    h22 = -t1 * x * E * (D - 2.0 * E) / D**3
    h11, h12, h22 = np.broadcast_arrays(h11, h12, h22)
    return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)


def _chw_f(x, th):
    t1, t2, t3 = _cols(th, 3)
    return np.exp(-t1 * x) / (t2 + t3 * x)


def _chw_g(x, th):
    t1, t2, t3 = _cols(th, 3)
    D = t2 + t3 * x
    f = np.exp(-t1 * x) / D
    d1, d2, d3 = np.broadcast_arrays(-x * f, -f / D, -x * f / D)
    return np.stack([d1, d2, d3], axis=-1)


MODEL1 = RegressionModel(
    "model1", 2, _m1_f, _m1_g, _m1_h,
    lower=[-100.0, -5.0], upper=[100.0, 5.0], start=[2.0, 0.04],
)
MODEL2 = RegressionModel(
    "model2", 2, _m2_f, _m2_g, _m2_h,
    lower=[-100.0, -10.0], upper=[100.0, 10.0], start=[10.0, 0.0],
)
CHWIRUT1 = RegressionModel(
    "chwirut1", 3, _chw_f, _chw_g, None,
    lower=[0.0, 0.0, 0.0], upper=[np.inf, np.inf, np.inf], start=[0.1, 0.01, 0.02],
)

_REGISTRY: dict[str, RegressionModel] = {m.name: m for m in (MODEL1, MODEL2, CHWIRUT1)}


def register_model(model: RegressionModel, *, replace: bool = False) -> RegressionModel:
    if model.name in _REGISTRY and not replace:
        raise ValueError(f"model {model.name!r} already registered")
    _REGISTRY[model.name] = model
    return model


def get_model(name: str) -> RegressionModel:
    try:
        return _REGISTRY[name.lower()]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise KeyError(f"unknown model {name!r} (known: {known})") from None


_EXPR_NAMESPACE = {
    name: getattr(np, name)
    for name in ("exp", "log", "log1p", "expm1", "sqrt", "sin", "cos", "tan",
                 "arctan", "tanh", "abs", "power", "pi", "e")
}


def model_from_expression(
    name: str,
    expr: str,
    p: int,
    *,
    lower=None,
    upper=None,
    start=None,
) -> RegressionModel:
    """Build a model from an expression in ``x`` and ``theta[0..p-1]``.

    Example: ``"theta[0] * x * exp(-theta[1] * x)"``.  Only numpy elementwise
    functions are in scope.  The gradient falls back to central differences.
    """
    code = compile(expr, f"<model {name}>", "eval")
    for var in code.co_names:
        if var not in _EXPR_NAMESPACE and var not in ("x", "theta"):
            raise ValueError(f"name {var!r} not allowed in model expression")

    def func(x, th):
        out = eval(code, {"__builtins__": {}}, {**_EXPR_NAMESPACE, "x": x, "theta": _cols(th, p)})
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(out), th.shape[:-1] + np.shape(x)[-1:]))

    return RegressionModel(name, p, func, None, None, lower=lower, upper=upper, start=start)


# scalar-friendly public operations ------------------------------------------


def _check_theta(model: RegressionModel, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (model.p,):
        raise ValueError(f"{model.name} expects {model.p} parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters must be finite")
    return theta


def _finish(value: np.ndarray, what: str, model: RegressionModel):
    if not np.all(np.isfinite(value)):
        raise DomainError(f"{model.name}: {what} is not finite (singular point?)")
    return value


def eval_model(model: RegressionModel, x, theta):
    """f(x; theta).  Scalar ``x`` with a single theta gives a float."""
    theta = _check_theta(model, theta)
    xa = np.asarray(x, float)
    out = model.f(np.atleast_1d(xa), theta)
    # singularities (e.g. a zero Chwirut denominator) surface as inf/nan
    _finish(out, "f", model)
    if xa.ndim == 0 and theta.ndim == 1:
        return float(out[0])
    return out


def grad_model(model: RegressionModel, x, theta) -> np.ndarray:
    """Gradient of f in theta; shape ``(p,)`` for scalar x and a single theta."""
    eval_model(model, x, theta)
    theta = np.asarray(theta, float)
    xa = np.asarray(x, float)
    g = _finish(model.jac(np.atleast_1d(xa), theta), "gradient", model)
    if xa.ndim == 0 and theta.ndim == 1:
        return g[0]
    return g


def hess_model(model: RegressionModel, x, theta) -> np.ndarray:
    eval_model(model, x, theta)
    theta = np.asarray(theta, float)
    xa = np.asarray(x, float)
    H = _finish(model.hessian(np.atleast_1d(xa), theta), "Hessian", model)
    if xa.ndim == 0 and theta.ndim == 1:
        return H[0]
    return H


def fd_gradient(model: RegressionModel, x, theta, h: float = 1e-6) -> np.ndarray:
    """Central differences (f(theta + h e_j) - f(theta - h e_j)) / 2h, one coordinate at a time."""
    if not np.all(np.asarray(h) > 0):
        raise ValueError("finite-difference step must be positive")
    theta = _check_theta(model, theta)
    xa = np.asarray(x, float)

    def f(xx, th):
        return eval_model(model, xx, th)

    g = fd_jacobian(f, np.atleast_1d(xa), theta, h)
    if xa.ndim == 0 and theta.ndim == 1:
        return g[0]
    return g
