"""Weighted nonlinear least squares by Levenberg-Marquardt.

The solver works on a batch of problems at once: each row carries its own
weight vector (and optionally its own design), damping parameter and
convergence state, and rows never interact.  ``fit`` is the single-problem
front end; ``fit_batch`` is what the resampling code uses to refit thousands
of weight vectors without a Python-level loop per replicate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularNormalEquations
from .models import Dataset, RegressionModel

__all__ = [
    "Criterion",
    "Status",
    "SolverConfig",
    "FitResult",
    "BatchFit",
    "weighted_rss",
    "rss_gradient",
    "fit",
    "fit_batch",
    "sigma_n_inv",
    "grad_phi",
    "condition_j_diag",
]


class Criterion(enum.IntEnum):
    """Which stopping test declared convergence."""

    NONE = 0
    GRADIENT = 1
    STEP = 2
    OBJECTIVE = 3


class Status(enum.IntEnum):
    CONVERGED = 0
    NOT_CONVERGED = 1
    DEGENERATE = 2
    SINGULAR = 3
    DOMAIN = 4

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 200
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    q_rel_tol: float = 1e-12
    damping_init: float = 1e-3
    damping_factor: float = 10.0
    damping_min: float = 1e-12
    damping_max: float = 1e12
    singular_tol: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        for name in ("grad_tol", "step_tol", "q_rel_tol", "damping_init", "singular_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.damping_factor > 1:
            raise ValueError("damping_factor must exceed 1")
        if not 0 < self.damping_min <= self.damping_init <= self.damping_max:
            raise ValueError("need 0 < damping_min <= damping_init <= damping_max")


DEFAULT_CONFIG = SolverConfig()


@dataclass(frozen=True)
class FitResult:
    """Outcome of one (weighted) least-squares fit.

    ``q`` is the weighted objective at ``theta``; ``sigma2`` is ``q / (n - p)``.
    ``sigma_inv`` is (1/n) sum grad f_i grad f_i' at ``theta`` (unweighted) and
    ``sigma`` its inverse (NaN-filled when singular).
    """

    theta: np.ndarray
    q: float
    sigma2: float
    sigma_inv: np.ndarray
    sigma: np.ndarray
    iters: int
    converged: bool
    grad_norm: float
    status: Status
    n: int
    criterion: Criterion = Criterion.NONE

    @property
    def p(self) -> int:
        return int(self.theta.size)

    @property
    def sigma_hat(self) -> float:
        return float(np.sqrt(self.sigma2))


@dataclass(frozen=True)
class BatchFit:
    theta: np.ndarray  # (B, p)
    q: np.ndarray  # (B,)
    iters: np.ndarray  # (B,)
    status: np.ndarray  # (B,) of Status values
    grad_norm: np.ndarray  # (B,)
    criterion: np.ndarray  # (B,) of Criterion values

    @property
    def converged(self) -> np.ndarray:
        return self.status == Status.CONVERGED


# objective pieces -------------------------------------------------------------


def _wrss(w, r):
    return np.sum(w * r * r, axis=-1)


def weighted_rss(model: RegressionModel, data: Dataset, theta, w=None) -> float:
    """sum_i w_i (y_i - f(x_i; theta))^2; unit weights when ``w`` is None."""
    r = _residuals(model, data, theta)
    w = np.ones(data.n) if w is None else _check_weights(w, data.n)
    return float(_wrss(w, r))


def rss_gradient(model: RegressionModel, data: Dataset, theta, w=None) -> np.ndarray:
    """Gradient of the weighted objective: 2 sum_i w_i phi_i with phi_i = -(y_i - f_i) grad f_i."""
    r = _residuals(model, data, theta)
    w = np.ones(data.n) if w is None else _check_weights(w, data.n)
    J = model.jac(data.x, np.asarray(theta, float))
    phi = -r[:, None] * J
    return 2.0 * np.sum(w[:, None] * phi, axis=0)


def _residuals(model, data, theta):
    theta = np.asarray(theta, float)
    if theta.shape != (model.p,):
        raise ValueError(f"{model.name} expects {model.p} parameters")
    r = data.y - model.f(data.x, theta)
    if not np.all(np.isfinite(r)):
        raise DomainError(f"{model.name}: model not finite at theta={theta}")
    return r


def _check_weights(w, n):
    w = np.asarray(w, float)
    if w.shape != (n,):
        raise ValueError(f"weight vector has shape {w.shape}, expected ({n},)")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    return w


# linear algebra ------------------------------------------------------------


def _damped_solve(A, g, lam, tol):
    """Solve (A + lam diag(A)) d = g row-wise for small p.

    The system is Jacobi-scaled to unit diagonal before a plain Cholesky, so
    the singularity test ``pivot <= tol`` is relative to each column's own
    diagonal.  Returns the step and a mask of rows that failed.
    """
    k, p, _ = A.shape
    diag = np.diagonal(A, axis1=1, axis2=2)
    bad = ~np.all(diag > 0, axis=1)
    s = 1.0 / np.sqrt(np.where(bad[:, None], 1.0, diag))
    M = A * s[:, :, None] * s[:, None, :]
    idx = np.arange(p)
    M[:, idx, idx] = 1.0 + lam[:, None]
    b = g * s
    L = np.zeros_like(M)
    for j in range(p):
        d = M[:, j, j] - np.sum(L[:, j, :j] ** 2, axis=1)
        # damped unit diagonal is 1 + lam, so compare against that scale
        bad |= ~(d > tol * (1.0 + lam))
        ljj = np.sqrt(np.where(bad, 1.0, d))
        L[:, j, j] = ljj
        for i in range(j + 1, p):
            L[:, i, j] = (M[:, i, j] - np.sum(L[:, i, :j] * L[:, j, :j], axis=1)) / ljj
    z = np.zeros_like(b)
    for i in range(p):
        z[:, i] = (b[:, i] - np.sum(L[:, i, :i] * z[:, :i], axis=1)) / L[:, i, i]
    u = np.zeros_like(b)
    for i in reversed(range(p)):
        u[:, i] = (z[:, i] - np.sum(L[:, i + 1:, i] * u[:, i + 1:], axis=1)) / L[:, i, i]
    d = u * s
    d[bad] = 0.0
    return d, bad


# the batched solver --------------------------------------------------------------


def fit_batch(
    model: RegressionModel,
    x,
    y,
    W,
    theta_start,
    cfg: SolverConfig = DEFAULT_CONFIG,
    *,
    trace: list | None = None,
) -> BatchFit:
    """Minimise sum_i W[b, i] (y_i - f(x_i; theta))^2 independently for every row b.

    ``x`` and ``y`` are ``(n,)`` for a shared design or ``(B, n)`` per row.
    ``theta_start`` is ``(p,)`` or ``(B, p)``.  Rows with fewer than ``p``
    positive weights are returned as DEGENERATE without iterating.  When
    ``trace`` is a list, the objective of every accepted iterate is appended
    as ``(row, q)``; intended for tests.
    """
    W = np.atleast_2d(np.asarray(W, float))
    B, n = W.shape
    p = model.p
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    theta = np.array(np.broadcast_to(np.asarray(theta_start, float), (B, p)))
    theta = model.project(theta)

    status = np.full(B, Status.NOT_CONVERGED, dtype=np.int8)
    iters = np.zeros(B, dtype=np.int64)
    gnorm = np.full(B, np.nan)
    lam = np.full(B, cfg.damping_init)
    nproj = np.zeros(B, dtype=np.int64)
    reason = np.zeros(B, dtype=np.int8)

    def rows(arr, sel):
        return arr if arr.ndim == 1 else arr[sel]

    # state for all rows (only active rows are refreshed)
    q = np.full(B, np.nan)
    A = np.zeros((B, p, p))
    g = np.zeros((B, p))

    def refresh(sel):
        xs, ys, ws, th = rows(x, sel), rows(y, sel), W[sel], theta[sel]
        r = ys - model.f(xs, th)
        J = model.jac(xs, th)
        q[sel] = _wrss(ws, r)
        wJ = ws[:, :, None] * J
        A[sel] = np.einsum("kni,knj->kij", wJ, J)
        g[sel] = np.einsum("kni,kn->ki", wJ, r)
        return np.isfinite(q[sel]) & np.all(np.isfinite(g[sel]), axis=1)

    degenerate = np.count_nonzero(W > 0, axis=1) < p
    status[degenerate] = Status.DEGENERATE
    active = np.flatnonzero(~degenerate)
    if active.size:
        ok = refresh(active)
        status[active[~ok]] = Status.DOMAIN
        active = active[ok]

    stopped = np.zeros(B, dtype=bool)
    stopped[degenerate] = True
    stopped[status == Status.DOMAIN] = True

    for _ in range(cfg.max_iters):
        if active.size == 0:
            break
        # gradient test: ||grad Q||_inf = 2 ||J'W r||_inf
        gn = 2.0 * np.max(np.abs(g[active]), axis=1)
        done = gn <= cfg.grad_tol * (1.0 + np.abs(q[active]))
        status[active[done]] = Status.CONVERGED
        reason[active[done]] = Criterion.GRADIENT
        stopped[active[done]] = True
        active = active[~done]
        if active.size == 0:
            break
        iters[active] += 1

        step, bad = _damped_solve(A[active], g[active], lam[active], cfg.singular_tol)
        brows = active[bad]
        if brows.size:
            ceiling = brows[lam[brows] >= cfg.damping_max]
            status[ceiling] = Status.SINGULAR
            stopped[ceiling] = True
            lam[brows] = np.minimum(lam[brows] * cfg.damping_factor, cfg.damping_max)

        cur = active[~bad]
        dstep = step[~bad]
        if cur.size:
            th_old = theta[cur]
            scale = np.max(np.abs(th_old), axis=1)
            tiny = np.max(np.abs(dstep), axis=1) <= cfg.step_tol * (scale + cfg.step_tol)
            status[cur[tiny]] = Status.CONVERGED
            reason[cur[tiny]] = Criterion.STEP
            stopped[cur[tiny]] = True
            cur, dstep, th_old = cur[~tiny], dstep[~tiny], th_old[~tiny]

        if cur.size:
            trial = th_old + dstep
            proj = model.project(trial)
            projected = np.any(proj != trial, axis=1)
            q_trial = _wrss(W[cur], rows(y, cur) - model.f(rows(x, cur), proj))
            q_trial = np.where(np.isfinite(q_trial), q_trial, np.inf)
            accept = q_trial < q[cur]

            acc = cur[accept]
            if acc.size:
                rel_dec = (q[acc] - q_trial[accept]) / np.maximum(q[acc], np.finfo(float).tiny)
                theta[acc] = proj[accept]
                nproj[acc] += projected[accept]
                lam[acc] = np.maximum(lam[acc] / cfg.damping_factor, cfg.damping_min)
                ok = refresh(acc)
                if trace is not None:
                    trace.extend(zip(acc.tolist(), q[acc].tolist()))
                # a second projection means the minimiser sits on the box edge
                fail = ~ok | (nproj[acc] > 1)
                status[acc[fail]] = Status.DOMAIN
                stopped[acc[fail]] = True
                small = (rel_dec <= cfg.q_rel_tol) & ~fail
                status[acc[small]] = Status.CONVERGED
                reason[acc[small]] = Criterion.OBJECTIVE
                stopped[acc[small]] = True

            rej = cur[~accept]
            lam[rej] *= cfg.damping_factor
            # no decrease even under the heaviest damping: give up on the row
            stopped[rej[lam[rej] > cfg.damping_max]] = True

        active = active[~stopped[active]]

    live = np.isfinite(q) & ~degenerate
    gnorm[live] = 2.0 * np.max(np.abs(g[live]), axis=1)
    return BatchFit(theta, q, iters, status, gnorm, reason)


def sigma_n_inv(model: RegressionModel, x, theta) -> np.ndarray:
    """(1/n) sum_i grad f_i grad f_i' at theta; batched over leading theta axes.

    ``x`` may be a Dataset or an array of design points.
    """
    x = x.x if isinstance(x, Dataset) else np.asarray(x, float)
    J = model.jac(x, np.asarray(theta, float))
    n = J.shape[-2]
    return np.einsum("...ni,...nj->...ij", J, J) / n


def _invert(S):
    try:
        return np.linalg.inv(S)
    except np.linalg.LinAlgError:
        return np.full_like(S, np.nan)


def fit(
    model: RegressionModel,
    data: Dataset,
    w=None,
    theta_start=None,
    cfg: SolverConfig = DEFAULT_CONFIG,
    *,
    trace: list | None = None,
) -> FitResult:
    """Weighted least-squares fit of ``model`` to ``data``.

    Raises SingularNormalEquations or DomainError on those failures; running
    out of iterations is reported through ``converged=False`` instead.
    """
    n, p = data.n, model.p
    w = np.ones(n) if w is None else _check_weights(w, n)
    if theta_start is None:
        if model.start is None:
            raise ValueError(f"model {model.name!r} has no default start; pass theta_start")
        theta_start = model.start
    theta_start = np.asarray(theta_start, float)
    if theta_start.shape != (p,):
        raise ValueError(f"{model.name} expects {p} starting values")
    if not model.admissible(theta_start):
        raise DomainError(f"start {theta_start} outside the admissible box of {model.name}")

    tr = [] if trace is not None else None
    res = fit_batch(model, data.x, data.y, w[None, :], theta_start, cfg, trace=tr)
    if trace is not None:
        trace.extend(qv for _, qv in tr)
    status = Status(int(res.status[0]))
    if status == Status.SINGULAR:
        raise SingularNormalEquations(f"{model.name}: normal equations singular at maximum damping")
    if status == Status.DOMAIN:
        raise DomainError(f"{model.name}: iterates left the admissible region")

    theta = res.theta[0].copy()
    theta.flags.writeable = False
    S_inv = sigma_n_inv(model, data.x, theta)
    q = float(res.q[0]) if status != Status.DEGENERATE else weighted_rss(model, data, theta, w)
    return FitResult(
        theta=theta,
        q=q,
        sigma2=q / (n - p) if n > p else np.nan,
        sigma_inv=S_inv,
        sigma=_invert(S_inv),
        iters=int(res.iters[0]),
        converged=status == Status.CONVERGED,
        grad_norm=float(res.grad_norm[0]),
        status=status,
        n=n,
        criterion=Criterion(int(res.criterion[0])),
    )


def grad_phi(model: RegressionModel, data: Dataset, theta, i: int) -> np.ndarray:
    """grad f_i grad f_i' - (y_i - f_i) Hess f_i for observation ``i``."""
    theta = np.asarray(theta, float)
    xi = data.x[i : i + 1]
    r = data.y[i] - model.f(xi, theta)[0]
    gi = model.jac(xi, theta)[0]
    Hi = model.hessian(xi, theta)[0]
    return np.outer(gi, gi) - r * Hi


def condition_j_diag(model: RegressionModel, x, theta, theta_prime) -> float:
    """(1/n) sum_i (f_i(theta) - f_i(theta'))^2 over the design ``x``."""
    x = x.x if isinstance(x, Dataset) else np.asarray(x, float)
    d = model.f(x, np.asarray(theta, float)) - model.f(x, np.asarray(theta_prime, float))
    if not np.all(np.isfinite(d)):
        raise DomainError(f"{model.name}: model not finite on the design")
    return float(np.mean(d * d))
