"""Exchangeable random weights with mean one.

Three schemes are supported: multinomial counts (the classical bootstrap),
scaled Dirichlet(alpha) (the Bayesian bootstrap for alpha = 1) and i.i.d.
standard exponential weights.  Every scheme reports the exact marginal
standard deviation ``tau_n`` of a single weight.

Randomness comes from :class:`RngStream`, a (seed, stream id) pair mapped
onto numpy's counter-based Philox generator, so replicate ``b`` always sees
the same numbers no matter which worker draws it or in which order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateWeights

__all__ = [
    "WeightScheme",
    "WeightVector",
    "RngStream",
    "MomentReport",
    "parse_scheme",
    "draw_weights",
    "draw_weight_matrix",
    "standardize",
    "assumption_w_report",
]

_U64 = (1 << 64) - 1

MULTINOMIAL = "multinomial"
DIRICHLET = "dirichlet"
EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class WeightScheme:
    kind: str
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in (MULTINOMIAL, DIRICHLET, EXPONENTIAL):
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("Dirichlet concentration must be positive")

    def tau(self, n: int) -> float:
        """Exact standard deviation of one weight w_i for sample size ``n``."""
        if n < 1:
            raise ValueError("n must be >= 1")
        if self.kind == MULTINOMIAL:
            return math.sqrt((n - 1) / n)
        if self.kind == DIRICHLET:
            return math.sqrt((n - 1) / (n * self.alpha + 1))
        return 1.0

    def __str__(self) -> str:
        if self.kind == DIRICHLET:
            return f"dirichlet:{self.alpha:g}"
        return self.kind


def parse_scheme(text: str | WeightScheme) -> WeightScheme:
    """Parse ``multinomial``, ``dirichlet[:alpha]`` or ``exponential``."""
    if isinstance(text, WeightScheme):
        return text
    kind, _, arg = text.strip().lower().partition(":")
    if kind == DIRICHLET:
        return WeightScheme(DIRICHLET, float(arg) if arg else 1.0)
    if arg:
        raise ValueError(f"scheme {kind!r} takes no parameter")
    return WeightScheme(kind)


@dataclass(frozen=True)
class RngStream:
    """Reproducible, independent random stream keyed by (seed, domain..., stream_id).

    ``domain`` namespaces streams used for different purposes (weights,
    design points, noise) and different outer simulation replications.
    """

    seed: int
    stream_id: int = 0
    domain: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        key = tuple(int(k) & _U64 for k in (*self.domain, self.stream_id))
        ss = np.random.SeedSequence(int(self.seed) & _U64, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    tau: float
    scheme: WeightScheme

    @property
    def degenerate(self) -> bool:
        return self.tau == 0.0


def _draw(scheme: WeightScheme, n: int, gen: np.random.Generator) -> np.ndarray:
    if scheme.kind == MULTINOMIAL:
        # n independent equiprobable cell picks, tallied
        return np.bincount(gen.integers(0, n, size=n), minlength=n).astype(float)
    if scheme.kind == DIRICHLET:
        g = gen.standard_gamma(scheme.alpha, size=n)
        total = g.sum()
        if not total > 0:
            raise DegenerateWeights("all gamma variates underflowed; alpha too small")
        return n * (g / total)
    return gen.standard_exponential(size=n)


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


def draw_weights(scheme: WeightScheme | str, n: int, rng) -> WeightVector:
    """One weight vector of length ``n``; deterministic for a given RngStream."""
    scheme = parse_scheme(scheme)
    if n < 1:
        raise ValueError("n must be >= 1")
    w = _draw(scheme, n, _generator(rng))
    return WeightVector(w, scheme.tau(n), scheme)


def draw_weight_matrix(scheme: WeightScheme | str, n: int, seed: int, stream_ids, domain=()) -> np.ndarray:
    """Stack the weight vectors of several streams, one row per stream id."""
    scheme = parse_scheme(scheme)
    ids = list(stream_ids)
    out = np.empty((len(ids), n))
    for row, sid in enumerate(ids):
        out[row] = _draw(scheme, n, RngStream(seed, sid, tuple(domain)).generator())
    return out


def standardize(wv: WeightVector) -> np.ndarray:
    """W_i = (w_i - 1) / tau_n."""
    if wv.tau == 0.0:
        raise DegenerateWeights("tau_n is zero; standardized weights are undefined")
    return (np.asarray(wv.w, float) - 1.0) / wv.tau


@dataclass(frozen=True)
class MomentReport:
    """Monte-Carlo moments of the standardized weights, each with its standard error.

    ``mean_w``: E[(1/n) sum W_i]; ``mean_w2``: E[(1/n) sum W_i^2];
    ``centered_w2``: E[(1/n) sum (W_i - mean W)^2]; ``cross``: E[W_i W_j], i != j;
    ``cross_sq``: E[W_i^2 W_j^2], i != j; ``fourth``: E[W_i^4].
    """

    scheme: str
    n: int
    draws: int
    mean_w: float
    mean_w_se: float
    mean_w2: float
    mean_w2_se: float
    centered_w2: float
    centered_w2_se: float
    cross: float
    cross_se: float
    cross_sq: float
    cross_sq_se: float
    fourth: float
    fourth_se: float
    multinomial_sum_exact: bool | None = None


def assumption_w_report(scheme: WeightScheme | str, n: int, draws: int, seed: int = 0) -> MomentReport:
    """Estimate the moment conditions on standardized weights over ``draws`` draws.

    Pair moments average over all ordered pairs i != j within each draw, which
    by exchangeability estimates the common E[W_i W_j] and E[W_i^2 W_j^2].
    """
    scheme = parse_scheme(scheme)
    if draws < 1 or n < 2:
        raise ValueError("need draws >= 1 and n >= 2")
    tau = scheme.tau(n)
    stats = np.empty((draws, 6))
    sums_exact = True
    for d in range(draws):
        w = _draw(scheme, n, RngStream(seed, d, (7,)).generator())
        if scheme.kind == MULTINOMIAL:
            sums_exact &= bool(w.sum() == n)
        W = (w - 1.0) / tau
        W2 = W * W
        s1, s2, s4 = W.sum(), W2.sum(), (W2 * W2).sum()
        m1 = s1 / n
        pairs = n * (n - 1)
        stats[d] = (
            m1,
            s2 / n,
            s2 / n - m1 * m1,
            (s1 * s1 - s2) / pairs,
            (s2 * s2 - s4) / pairs,
            s4 / n,
        )
    mean = stats.mean(axis=0)
    se = stats.std(axis=0, ddof=1) / math.sqrt(draws) if draws > 1 else np.full(6, np.nan)
    return MomentReport(
        str(scheme), n, draws,
        *(float(v) for pair in zip(mean, se) for v in pair),
        multinomial_sum_exact=sums_exact if scheme.kind == MULTINOMIAL else None,
    )
