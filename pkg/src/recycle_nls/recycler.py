"""Random-weighting ("recycling") replicates of a nonlinear least-squares fit.

Each replicate draws a mean-one weight vector, refits the weighted criterion
starting from the original estimate and records the normalised pivot

    R*_b = sqrt(n) c'(theta*_b - theta_hat) / (tau_n sqrt(c' Sigma_n(theta_hat) c)),

together with its studentized version R*_b / sigma_hat.  The empirical law
of these pivots stands in for the sampling law of

    R = sqrt(n) c'(theta_hat - theta_0) / sqrt(c' Sigma_n(theta_0) c).

Work is split into fixed blocks of replicates (or outer simulation reps).
Block boundaries depend only on the replicate count, and every replicate
draws from its own random stream, so results are bit-identical for any
number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import stats
from .errors import DegenerateWeights, NonPositiveVariance, TooFewReplicates
from .models import Dataset, RegressionModel
from .weights import RngStream, WeightScheme, draw_weight_matrix, parse_scheme
from .wls_solver import DEFAULT_CONFIG, FitResult, SolverConfig, Status, fit, fit_batch, sigma_n_inv

__all__ = [
    "BLOCK",
    "UNRELIABLE_FRACTION",
    "MIN_CI_REPLICATES",
    "direction",
    "unit_vector",
    "pivot_r",
    "pivot_r_star",
    "studentize",
    "RecycleRun",
    "run_recycle",
    "recycled_cdf",
    "CiResult",
    "confidence_interval",
    "simulate_dataset",
    "CoverageReport",
    "coverage_study",
    "SimulatedPivots",
    "sampling_distribution_sim",
]

BLOCK = 256
UNRELIABLE_FRACTION = 0.05
MIN_CI_REPLICATES = 50

# stream namespaces
WEIGHTS = 1
DESIGN = 2
NOISE = 3
_SCHEME_CODE = {"multinomial": 1, "dirichlet": 2, "exponential": 3}
# simulation purposes, so coverage, pivot simulation and table samples never share streams
P_COVERAGE = 1
P_SIMDIST = 2
P_SAMPLE = 3


def direction(c) -> np.ndarray:
    """A unit vector from ``c``; raises when ``c`` is not unit norm to 1e-12."""
    c = np.asarray(c, dtype=float).ravel()
    if c.size == 0 or abs(np.linalg.norm(c) - 1.0) > 1e-12:
        raise ValueError(f"direction {c} is not a unit vector")
    return c


def unit_vector(j: int, p: int) -> np.ndarray:
    e = np.zeros(p)
    e[j] = 1.0
    return e


def _quad(c, S) -> np.ndarray:
    v = np.einsum("i,...ij,j->...", c, S, c)
    if np.any(~(v > 0)):
        raise NonPositiveVariance(f"c' Sigma c = {v} is not positive")
    return v


def pivot_r(model: RegressionModel, x, theta_hat, theta_ref, c) -> float | np.ndarray:
    """sqrt(n) c'(theta_hat - theta_ref) / sqrt(c' Sigma_n(theta_ref) c).

    ``x`` is the design (or Dataset); leading axes of ``theta_hat`` and ``x``
    broadcast, which lets a batch of simulated fits be handled in one call.
    """
    x = x.x if isinstance(x, Dataset) else np.asarray(x, float)
    c = direction(c)
    theta_ref = np.asarray(theta_ref, float)
    S = np.linalg.inv(sigma_n_inv(model, x, theta_ref))
    n = x.shape[-1]
    num = math.sqrt(n) * ((np.asarray(theta_hat, float) - theta_ref) @ c)
    out = num / np.sqrt(_quad(c, S))
    return float(out) if np.ndim(out) == 0 else out


def pivot_r_star(base: FitResult, theta_star, tau: float, c) -> float | np.ndarray:
    """sqrt(n) c'(theta* - theta_hat) / (tau sqrt(c' Sigma_n(theta_hat) c)); vectorised over rows of theta*."""
    if not tau > 0:
        raise DegenerateWeights("tau_n must be positive")
    c = direction(c)
    denom = tau * math.sqrt(float(_quad(c, base.sigma)))
    num = math.sqrt(base.n) * ((np.asarray(theta_star, float) - base.theta) @ c)
    out = num / denom
    return float(out) if np.ndim(out) == 0 else out


def studentize(r, sigma_hat: float):
    """r / sigma_hat.  With sigma_hat == 0 (noise-free data) zero pivots stay zero."""
    r = np.asarray(r, float)
    if sigma_hat > 0:
        return r / sigma_hat
    return np.where(r == 0, 0.0, np.copysign(np.inf, r))


@dataclass(frozen=True)
class RecycleRun:
    """B recycled replicates of one fit.

    ``flags`` holds a :class:`Status` per replicate; only CONVERGED rows enter
    ECDFs, quantiles and intervals.
    """

    base: FitResult
    scheme: WeightScheme
    c: np.ndarray
    tau: float
    seed: int
    theta_star: np.ndarray
    sigma_star: np.ndarray
    r_star: np.ndarray
    r_star_stud: np.ndarray
    flags: np.ndarray
    iters: np.ndarray = field(repr=False, default=None)

    @property
    def B(self) -> int:
        return int(self.flags.size)

    @property
    def ok(self) -> np.ndarray:
        return self.flags == Status.CONVERGED

    @property
    def n_excluded(self) -> int:
        return int(np.count_nonzero(~self.ok))

    @property
    def unreliable(self) -> bool:
        return self.n_excluded > UNRELIABLE_FRACTION * self.B

    def pivots(self, c=None, *, studentized: bool = True) -> np.ndarray:
        """Pivots of the usable replicates for direction ``c`` (default: the run's own)."""
        if c is None:
            r = self.r_star_stud if studentized else self.r_star
            return r[self.ok]
        r = pivot_r_star(self.base, self.theta_star[self.ok], self.tau, c)
        return studentize(r, self.base.sigma_hat) if studentized else np.asarray(r)


def _check_dof(n: int, p: int):
    if n <= p:
        raise ValueError(f"n={n} leaves no residual degrees of freedom for p={p}")


def _replicate_block(model, data, scheme, base, c, tau, cfg, seed, domain, ids):
    W = draw_weight_matrix(scheme, data.n, seed, ids, (WEIGHTS, _SCHEME_CODE[scheme.kind], *domain))
    res = fit_batch(model, data.x, data.y, W, base.theta, cfg)
    resid = data.y - model.f(data.x, res.theta)
    sig = np.sqrt(np.sum(resid * resid, axis=1) / (data.n - model.p))
    r = pivot_r_star(base, res.theta, tau, c) if tau > 0 else np.full(len(ids), np.nan)
    return res.theta, sig, np.atleast_1d(r), res.status, res.iters


def _blocks(total: int):
    return [range(s, min(s + BLOCK, total)) for s in range(0, total, BLOCK)]


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_recycle(
    model: RegressionModel,
    data: Dataset,
    scheme,
    B: int,
    c=None,
    cfg: SolverConfig = DEFAULT_CONFIG,
    seed: int = 0,
    *,
    workers: int = 1,
    base: FitResult | None = None,
    theta_start=None,
    domain: tuple[int, ...] = (),
) -> RecycleRun:
    """Fit ``data`` (unless ``base`` is given) and run ``B`` weighted refits.

    Replicate ``b`` (1-based) uses stream id ``b`` under ``domain``.  Refits
    start at the base estimate.  Per-replicate failures are recorded in
    ``flags`` and never abort the run.  ``c`` defaults to the normalised
    all-ones direction.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    _check_dof(data.n, model.p)
    scheme = parse_scheme(scheme)
    if base is None:
        base = fit(model, data, None, theta_start, cfg)
    if not base.converged:
        raise RuntimeError(f"base fit did not converge (status {base.status.label})")
    if c is None:
        c = np.full(model.p, 1.0 / math.sqrt(model.p))
    c = direction(c)
    tau = scheme.tau(data.n)

    def work(block):
        return _replicate_block(model, data, scheme, base, c, tau, cfg, seed, domain, [b + 1 for b in block])

    parts = _map(work, _blocks(B), workers)
    theta_star = np.concatenate([p[0] for p in parts])
    sigma_star = np.concatenate([p[1] for p in parts])
    r_star = np.concatenate([p[2] for p in parts])
    flags = np.concatenate([p[3] for p in parts])
    iters = np.concatenate([p[4] for p in parts])
    if tau == 0:
        flags[:] = Status.DEGENERATE
    return RecycleRun(
        base=base,
        scheme=scheme,
        c=c,
        tau=tau,
        seed=seed,
        theta_star=theta_star,
        sigma_star=sigma_star,
        r_star=r_star,
        r_star_stud=studentize(r_star, base.sigma_hat),
        flags=flags,
        iters=iters,
    )


def recycled_cdf(run: RecycleRun, t, *, studentized: bool = False):
    """(1/B') #{b : R*_b <= t} over the B' usable replicates."""
    return stats.ecdf(run.pivots(studentized=studentized), t)


@dataclass(frozen=True)
class CiResult:
    level: float
    lower: float
    upper: float
    method: str = "bootstrap-t"
    covered: bool | None = None

    @property
    def length(self) -> float:
        return self.upper - self.lower


def confidence_interval(run: RecycleRun, j: int, level: float = 0.95) -> CiResult:
    """Bootstrap-t interval for theta_j from the studentized e_j pivots.

    With s_j = sigma_hat sqrt(Sigma_n(theta_hat)_jj / n) and q_L, q_U the
    lower/upper (1 -/+ level)/2 type-7 quantiles of the pivots, the interval
    is [theta_hat_j - q_U s_j, theta_hat_j - q_L s_j].  The pivots are
    rebuilt from ``theta_star``, so any run can serve every coordinate.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    p = run.base.p
    if not 0 <= j < p:
        raise IndexError(f"parameter index {j} out of range for p={p}")
    piv = np.sort(run.pivots(unit_vector(j, p)))
    if piv.size < MIN_CI_REPLICATES:
        raise TooFewReplicates(f"{piv.size} usable replicates; need {MIN_CI_REPLICATES}")
    qL = stats.quantile(piv, (1.0 - level) / 2.0)
    qU = stats.quantile(piv, (1.0 + level) / 2.0)
    s = run.base.sigma_hat * math.sqrt(run.base.sigma[j, j] / run.base.n)
    th = float(run.base.theta[j])
    # s == 0 only for exact fits; the interval then collapses onto theta_hat
    lo = th if s == 0 else th - qU * s
    hi = th if s == 0 else th - qL * s
    return CiResult(level, lo, hi)


# simulation ---------------------------------------------------------------


def simulate_dataset(model: RegressionModel, theta0, n: int, noise_sd: float, seed: int,
                     rep: int, purpose: int = P_COVERAGE, x_range=(0.0, 10.0)) -> Dataset:
    """Design uniform on ``x_range`` and Gaussian noise, each from its own stream."""
    x = RngStream(seed, rep, (purpose, DESIGN)).generator().uniform(*x_range, size=n)
    eps = RngStream(seed, rep, (purpose, NOISE)).generator().normal(0.0, noise_sd, size=n)
    return Dataset(x, model.f(x, np.asarray(theta0, float)) + eps)


@dataclass(frozen=True)
class CoverageReport:
    model: str
    theta0: np.ndarray
    n: int
    scheme: str
    B: int
    reps: int
    level: float
    noise_sd: float
    coverage: np.ndarray  # per parameter
    mean_length: np.ndarray  # per parameter
    used: int
    dropped: int
    unreliable: int
    rep_index: np.ndarray  # outer reps kept
    lower: np.ndarray  # (used, p)
    upper: np.ndarray  # (used, p)
    covered: np.ndarray  # (used, p)


def _coverage_rep(model, theta0, n, scheme, B, level, noise_sd, seed, cfg, r):
    data = simulate_dataset(model, theta0, n, noise_sd, seed, r, P_COVERAGE)
    try:
        base = fit(model, data, None, theta0, cfg)
    except (ArithmeticError, ValueError):
        return None
    if not base.converged or not np.all(np.isfinite(base.sigma)):
        return None
    run = run_recycle(model, data, scheme, B, None, cfg, seed, base=base, domain=(P_COVERAGE, r))
    try:
        cis = [confidence_interval(run, j, level) for j in range(model.p)]
    except TooFewReplicates:
        return None
    return cis, run.unreliable


def coverage_study(
    model: RegressionModel,
    theta0,
    n: int,
    scheme,
    B: int,
    reps: int,
    level: float = 0.95,
    noise_sd: float = 0.25,
    seed: int = 0,
    *,
    cfg: SolverConfig = DEFAULT_CONFIG,
    workers: int = 1,
) -> CoverageReport:
    """Repeat simulate -> fit -> recycle -> interval ``reps`` times.

    Base fits start at ``theta0``.  Reps whose base fit fails or that leave
    fewer than the minimum usable replicates are dropped and counted.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    _check_dof(n, model.p)
    scheme = parse_scheme(scheme)
    theta0 = np.asarray(theta0, float)
    p = model.p

    out = _map(lambda r: _coverage_rep(model, theta0, n, scheme, B, level, noise_sd, seed, cfg, r),
               list(range(reps)), workers)
    kept = [(r, o) for r, o in enumerate(out) if o is not None]
    lower = np.array([[ci.lower for ci in o[0]] for _, o in kept]).reshape(-1, p)
    upper = np.array([[ci.upper for ci in o[0]] for _, o in kept]).reshape(-1, p)
    covered = (lower <= theta0) & (theta0 <= upper)
    used = len(kept)
    return CoverageReport(
        model=model.name,
        theta0=theta0,
        n=n,
        scheme=str(scheme),
        B=B,
        reps=reps,
        level=level,
        noise_sd=noise_sd,
        coverage=covered.mean(axis=0) if used else np.full(p, np.nan),
        mean_length=(upper - lower).mean(axis=0) if used else np.full(p, np.nan),
        used=used,
        dropped=reps - used,
        unreliable=sum(1 for _, o in kept if o[1]),
        rep_index=np.array([r for r, _ in kept], dtype=np.int64),
        lower=lower,
        upper=upper,
        covered=covered,
    )


@dataclass(frozen=True)
class SimulatedPivots:
    """Pivots R from fresh datasets: raw, studentized by each fit's sigma_hat."""

    r: np.ndarray
    r_stud: np.ndarray
    sigma_hat: np.ndarray
    theta_hat: np.ndarray
    rep_index: np.ndarray
    dropped: int


def _simdist_block(model, theta0, n, c, noise_sd, seed, cfg, reps):
    ds = [simulate_dataset(model, theta0, n, noise_sd, seed, r, P_SIMDIST) for r in reps]
    X = np.stack([d.x for d in ds])
    Y = np.stack([d.y for d in ds])
    res = fit_batch(model, X, Y, np.ones_like(X), theta0, cfg)
    ok = res.status == Status.CONVERGED
    r = pivot_r(model, X, res.theta, theta0, c)
    sig = np.sqrt(res.q / (n - model.p))
    return np.atleast_1d(r), sig, res.theta, ok


def sampling_distribution_sim(
    model: RegressionModel,
    theta0,
    n: int,
    c,
    reps: int,
    noise_sd: float = 0.25,
    seed: int = 0,
    *,
    cfg: SolverConfig = DEFAULT_CONFIG,
    workers: int = 1,
) -> SimulatedPivots:
    """Simulate ``reps`` datasets at theta0, fit each from theta0, and return the pivots R."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    _check_dof(n, model.p)
    theta0 = np.asarray(theta0, float)
    c = direction(c)
    parts = _map(lambda blk: _simdist_block(model, theta0, n, c, noise_sd, seed, cfg, list(blk)),
                 _blocks(reps), workers)
    r = np.concatenate([p[0] for p in parts])
    sig = np.concatenate([p[1] for p in parts])
    th = np.concatenate([p[2] for p in parts])
    ok = np.concatenate([p[3] for p in parts])
    rs = np.array([float(studentize(ri, si)) for ri, si in zip(r[ok], sig[ok])])
    return SimulatedPivots(
        r=r[ok],
        r_stud=rs,
        sigma_hat=sig[ok],
        theta_hat=th[ok],
        rep_index=np.flatnonzero(ok),
        dropped=int(np.count_nonzero(~ok)),
    )
