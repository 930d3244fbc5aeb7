"""Analytic step-probability formulas, geometric-sum oracles, and estimators.

Two one-step probabilities drive every experiment here, both for a uniformly
random ordered pair among n agents:

* ``p_leave(i, n)``: with i agents still in the initial state, the chance the
  next interaction touches at least one of them, i(2n-i-1)/(n(n-1));
* ``p_epidemic(k, n)``: with k agents informed, the chance the next
  interaction pairs an informed with an uninformed agent, 2k(n-k)/(n(n-1)).

Hitting times built from these are sums of independent geometric variables;
the helpers below construct the probability lists, evaluate their exact means
and variances, and sample them, so simulations can be checked against
closed forms and vice versa.

Thresholds of the shape n**(2/3) are always rounded up, with exact integer
arithmetic so perfect powers do not fall victim to floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from .rng import Splitmix64

PERCENTILE_LEVELS = (1, 5, 25, 50, 75, 95, 99)


def p_leave(i: int, n: int) -> float:
    """Probability that a step removes at least one of ``i`` remaining
    initial-state agents: i(2n-i-1)/(n(n-1))."""
    if n < 2:
        raise ValueError("population size must be >= 2")
    if not 0 <= i <= n:
        raise ValueError(f"initial-state count {i} out of range [0, {n}]")
    return i * (2 * n - i - 1) / (n * (n - 1))


def p_epidemic(k: int, n: int) -> float:
    """Probability that a step grows an informed set of size ``k``:
    2k(n-k)/(n(n-1))."""
    if n < 2:
        raise ValueError("population size must be >= 2")
    if not 1 <= k <= n:
        raise ValueError(f"informed count {k} out of range [1, {n}]")
    return 2 * k * (n - k) / (n * (n - 1))


@dataclass(frozen=True)
class GeometricSumSpec:
    """An ordered list of success probabilities, one geometric variable each."""

    probabilities: tuple[float, ...]

    def __post_init__(self):
        for p in self.probabilities:
            if not 0 < p <= 1:
                raise ValueError(f"success probability {p} outside (0, 1]")

    def __len__(self) -> int:
        return len(self.probabilities)


def coupon_spec(n: int, f: Union[int, float]) -> GeometricSumSpec:
    """Lower-bound spec for draining the initial state down below ``f`` agents.

    Pairs up the descent: indices run from f* = 2*ceil(f/2) in steps of two up
    to the largest index of matching parity (n or n-1; both have success
    probability 1).  Summing one geometric per index stochastically
    lower-bounds the real process, which may remove two agents per step.
    When f* exceeds n the list is empty.
    """
    if n < 2:
        raise ValueError("population size must be >= 2")
    if not 1 <= f <= n:
        raise ValueError(f"threshold {f} out of range [1, {n}]")
    f_star = 2 * math.ceil(f / 2)
    return GeometricSumSpec(tuple(p_leave(i, n) for i in range(f_star, n + 1, 2)))


def epidemic_spec(n: int, target_size: int) -> GeometricSumSpec:
    """Spec whose sum is the first-passage time of the informed-set chain
    from size 1 to ``target_size``."""
    if not 2 <= target_size <= n:
        raise ValueError(f"target size {target_size} out of range [2, {n}]")
    return GeometricSumSpec(tuple(p_epidemic(k, n) for k in range(1, target_size)))


def expected_coupon_sum(spec: GeometricSumSpec) -> float:
    """Exact mean of the geometric sum: sum of 1/p."""
    return sum(1.0 / p for p in spec.probabilities)


def variance_coupon_sum(spec: GeometricSumSpec) -> float:
    """Exact variance of the geometric sum: sum of (1-p)/p**2."""
    return sum((1.0 - p) / (p * p) for p in spec.probabilities)


def simulate_geometric_sum(rng: Splitmix64, spec: GeometricSumSpec) -> int:
    """Draw each geometric variable independently and return the sum.

    Inverse transform: X = ceil(ln U / ln(1-p)) with U uniform on (0, 1),
    which has support {1, 2, ...}; p = 1 contributes exactly 1.  Deterministic
    for a given generator state.
    """
    total = 0
    for p in spec.probabilities:
        if p >= 1.0:
            total += 1
        else:
            total += math.ceil(math.log(rng.random()) / math.log1p(-p))
    return total


def ceil_rational_power(n: int, num: int, den: int) -> int:
    """Smallest integer m with m**den >= n**num, i.e. ceil(n**(num/den)).

    Pure integer arithmetic; a float guess is only used as a starting point,
    so perfect powers (say n a perfect cube for num/den = 2/3) come out exact.
    """
    if n < 1 or num < 0 or den < 1:
        raise ValueError("need n >= 1, num >= 0, den >= 1")
    target = n**num
    m = max(1, round(float(target) ** (1.0 / den)))
    while m**den < target:
        m += 1
    while m > 1 and (m - 1) ** den >= target:
        m -= 1
    return m


def ceil_two_thirds(n: int) -> int:
    """ceil(n**(2/3)) computed exactly."""
    return ceil_rational_power(n, 2, 3)


@dataclass(frozen=True)
class BlockParams:
    """Block decomposition of the informed-set first passage to ceil(n**(2/3)).

    ``r`` indices per block, ``kappa`` whole blocks; ``kappa * r`` never
    exceeds the threshold, and the final partial block (when the threshold is
    not divisible by r) is deliberately left out of the block bound.
    """

    n: int
    r: int
    kappa: int
    threshold: int

    @classmethod
    def for_population(cls, n: int) -> "BlockParams":
        if n < 1:
            raise ValueError("population size must be >= 1")
        r = math.isqrt(n)
        threshold = ceil_two_thirds(n)
        return cls(n=n, r=r, kappa=threshold // r, threshold=threshold)


def block_params(n: int) -> BlockParams:
    return BlockParams.for_population(n)


def block_lower_bound(params: BlockParams) -> int:
    """Sum over whole blocks of floor((r/2) * E[steps at the block's top index]).

    The top index of block i is k = (i+1) r; its geometric mean is
    n(n-1)/(2k(n-k)), so each term is floor(r n (n-1) / (4 k (n-k))), taken
    with exact integer arithmetic.  Indices at or beyond n (possible only at
    degenerate small n) contribute nothing.
    """
    n, r = params.n, params.r
    total = 0
    for i in range(params.kappa):
        k = (i + 1) * r
        if k >= n:
            break
        total += (r * n * (n - 1)) // (4 * k * (n - k))
    return total


@dataclass(frozen=True)
class EstimateRecord:
    """Summary statistics of one Monte Carlo sample."""

    count: int
    mean: float
    variance: float
    std_error: float
    percentiles: dict[int, float]


def summarize(samples: Sequence[float]) -> EstimateRecord:
    """Mean, unbiased variance, standard error, and fixed percentiles.

    The variance of a single sample is defined as 0.
    """
    if len(samples) == 0:
        raise ValueError("cannot summarize an empty sample")
    arr = np.asarray(samples, dtype=float)
    count = arr.size
    mean = float(arr.mean())
    variance = float(arr.var(ddof=1)) if count > 1 else 0.0
    std_error = math.sqrt(variance / count)
    levels = np.percentile(arr, PERCENTILE_LEVELS)
    return EstimateRecord(
        count=count,
        mean=mean,
        variance=variance,
        std_error=std_error,
        percentiles={lvl: float(val) for lvl, val in zip(PERCENTILE_LEVELS, levels)},
    )


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup |F_a - F_b|."""
    xa = np.sort(np.asarray(a, dtype=float))
    xb = np.sort(np.asarray(b, dtype=float))
    if xa.size == 0 or xb.size == 0:
        raise ValueError("both samples must be non-empty")
    grid = np.concatenate([xa, xb])
    cdf_a = np.searchsorted(xa, grid, side="right") / xa.size
    cdf_b = np.searchsorted(xb, grid, side="right") / xb.size
    return float(np.abs(cdf_a - cdf_b).max())


def ks_critical_value(alpha: float, n_a: int, n_b: int) -> float:
    """Large-sample two-sided KS rejection threshold at level ``alpha``:
    sqrt(ln(2/alpha)/2) * sqrt((n_a + n_b) / (n_a * n_b))."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if n_a < 1 or n_b < 1:
        raise ValueError("sample sizes must be >= 1")
    c = math.sqrt(math.log(2.0 / alpha) / 2.0)
    return c * math.sqrt((n_a + n_b) / (n_a * n_b))


def exact_fraction_p_leave(i: int, n: int) -> Fraction:
    """p_leave as an exact rational, for oracle comparisons."""
    if n < 2 or not 0 <= i <= n:
        raise ValueError("out of range")
    return Fraction(i * (2 * n - i - 1), n * (n - 1))


def exact_fraction_p_epidemic(k: int, n: int) -> Fraction:
    """p_epidemic as an exact rational, for oracle comparisons."""
    if n < 2 or not 1 <= k <= n:
        raise ValueError("out of range")
    return Fraction(2 * k * (n - k), n * (n - 1))
