"""Group all-reduce plans, a failure-aware cost model and group-size selection.

Peers are laid out on a mixed-radix grid whose radices multiply to ``n``. In
round ``t`` every peer averages with the peers that share all its digits except
digit ``t``, so after the last round each peer holds the exact global mean.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np


def num_rounds(n: int, m: int) -> int:
    """Smallest R with m**R >= n, computed without floating point."""
    r, cap = 0, 1
    while cap < n:
        cap *= m
        r += 1
    return r


@functools.lru_cache(maxsize=None)
def _factorizations(n: int, parts: int, cap: int) -> tuple[tuple[int, ...], ...]:
    """Non-increasing factor tuples of length ``parts`` with product ``n`` and max <= cap."""
    if parts == 0:
        return ((),) if n == 1 else ()
    out = []
    for f in range(min(n, cap), 0, -1):
        if n % f:
            continue
        for rest in _factorizations(n // f, parts - 1, f):
            out.append((f,) + rest)
    return tuple(out)


def radices(n: int, m: int) -> tuple[int, ...]:
    """Round group sizes: ``num_rounds(n, m)`` factors of ``n``, as balanced as possible.

    When ``n`` has no factorization into factors <= m, some rounds use larger
    groups and the surplus rounds degenerate to singletons.
    """
    r = num_rounds(n, m)
    if r == 0:
        return ()
    options = _factorizations(n, r, n)
    return min(options)


@dataclass(frozen=True)
class GroupPlan:
    n: int
    m: int
    rounds: tuple[tuple[tuple[int, ...], ...], ...]
    expected_iterations: float = math.nan
    radices: tuple[int, ...] = ()

    def group_of(self, round_index: int, peer: int) -> tuple[int, ...]:
        for grp in self.rounds[round_index]:
            if peer in grp:
                return grp
        raise KeyError(peer)


def build_plan(n: int, m: int, cost: "CostModel | None" = None, p: float = 0.0) -> GroupPlan:
    if not isinstance(n, (int, np.integer)) or not isinstance(m, (int, np.integer)):
        raise TypeError("n and m must be integers")
    if m < 2 or m > n:
        raise ValueError(f"group size must satisfy 2 <= m <= n, got m={m}, n={n}")
    rad = radices(n, m)
    strides = [1] * len(rad)
    for t in range(len(rad) - 2, -1, -1):
        strides[t] = strides[t + 1] * rad[t + 1]
    rounds = []
    for t, (radix, stride) in enumerate(zip(rad, strides)):
        groups = []
        for peer in range(n):
            if (peer // stride) % radix == 0:
                groups.append(tuple(peer + k * stride for k in range(radix)))
        rounds.append(tuple(groups))
    cost = cost or GeometricRetryCost()
    return GroupPlan(n, m, tuple(rounds), cost(n, m, p), rad)


# -- cost model -----------------------------------------------------------------

class CostModel(Protocol):
    def __call__(self, n: int, m: int, p: float) -> float: ...


def expected_max_geometric(k: int, q: float, tail_tol: float = 1e-12) -> float:
    """E[max of k i.i.d. Geometric(q)] on {1, 2, ...}."""
    if q >= 1.0:
        return 1.0
    if q <= 0.0:
        return math.inf
    if k == 1:
        return 1.0 / q
    r = 1.0 - q
    if q >= 1e-4:
        # sum_{t>=0} P(max > t), truncated once k r^T / (1 - r) drops under tail_tol
        horizon = math.ceil(math.log(tail_tol * q / k) / math.log(r)) + 1
        t = np.arange(max(horizon, 1), dtype=float)
        terms = -np.expm1(k * np.log1p(-np.power(r, t[1:])))
        return float(1.0 + terms.sum())
    import mpmath

    # inclusion-exclusion; 1 - r^j is formed via expm1/log1p so tiny q survives
    with mpmath.workdps(40 + k):
        lr = mpmath.log1p(-mpmath.mpf(q))
        total = mpmath.mpf(0)
        for j in range(1, k + 1):
            total += (-1) ** (j + 1) * mpmath.binomial(k, j) / -mpmath.expm1(j * lr)
        return float(total)


@dataclass(frozen=True)
class GeometricRetryCost:
    """Rounds times expected attempts of the slowest of ``ceil(n/m)`` groups.

    A group attempt succeeds when all ``m`` members survive, probability
    ``(1 - p)**m``; failed groups retry until they succeed.
    """

    tail_tol: float = 1e-12

    def __call__(self, n: int, m: int, p: float) -> float:
        _check_domain(n, m, p)
        k = -(-n // m)
        q = (1.0 - p) ** m
        return num_rounds(n, m) * expected_max_geometric(k, q, self.tail_tol)


def _check_domain(n: int, m: int, p: float) -> None:
    if not 2 <= m <= n:
        raise ValueError(f"need 2 <= m <= n, got m={m}, n={n}")
    if not 0.0 <= p < 1.0:
        raise ValueError(f"failure rate must be in [0, 1), got {p}")


def expected_iterations(n: int, m: int, p: float, cost: CostModel | None = None) -> float:
    return (cost or GeometricRetryCost())(n, m, p)


def optimal_group_size(n: int, p: float, cost: CostModel | None = None, rtol: float = 1e-12) -> int:
    """Group size minimizing expected iterations; near-ties go to the larger size."""
    if n < 2:
        raise ValueError("need at least two peers")
    if not 0.0 <= p < 1.0:
        raise ValueError(f"failure rate must be in [0, 1), got {p}")
    cost = cost or GeometricRetryCost()
    best_m, best = n, cost(n, n, p)
    for m in range(n - 1, 1, -1):
        v = cost(n, m, p)
        if v < best * (1 - rtol):
            best_m, best = m, v
    return best_m


def monte_carlo_iterations(n: int, m: int, p: float, trials: int, seed: int = 0, chunk: int = 200_000):
    """Sample the cost model directly; returns (mean, standard error)."""
    _check_domain(n, m, p)
    rng = np.random.default_rng(seed)
    k = -(-n // m)
    q = (1.0 - p) ** m
    r = num_rounds(n, m)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < trials:
        b = min(chunk, trials - done)
        draws = rng.geometric(q, size=(b, k)).max(axis=1).astype(float) * r
        total += draws.sum()
        total_sq += (draws**2).sum()
        done += b
    mean = total / trials
    var = max(total_sq / trials - mean**2, 0.0) * trials / max(trials - 1, 1)
    return mean, math.sqrt(var / trials)


# -- execution ------------------------------------------------------------------

@dataclass
class RunResult:
    values: np.ndarray
    weights: np.ndarray
    attempts: list[dict[tuple[int, ...], int]] = field(default_factory=list)
    gave_up: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.gave_up


def run_plan(
    plan: GroupPlan,
    values,
    failure_mask: Sequence[Sequence[int]] | None = None,
    *,
    weights=None,
    failure_rate: float = 0.0,
    max_attempts: int = 100,
    seed: int = 0,
) -> RunResult:
    """Execute the plan on per-peer vectors.

    ``failure_mask[r]`` lists peers that drop out of their group's first attempt
    in round ``r``. That group retries, each member failing independently with
    ``failure_rate`` on every further attempt; other groups are untouched. A
    group that exhausts ``max_attempts`` keeps its pre-round state.
    """
    x = np.asarray(values, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[0] != plan.n:
        raise ValueError(f"expected {plan.n} rows of values, got {x.shape[0]}")
    w = np.ones(plan.n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (plan.n,):
        raise ValueError("weights must have one entry per peer")
    if failure_mask is not None and len(failure_mask) > len(plan.rounds):
        raise ValueError("failure mask has more rounds than the plan")
    rng = np.random.default_rng(seed)
    sums = x * w[:, None]
    wts = w.copy()
    result = RunResult(values=x, weights=wts)
    for r, groups in enumerate(plan.rounds):
        failed = set(failure_mask[r]) if failure_mask is not None and r < len(failure_mask) else set()
        tally = {}
        for grp in groups:
            attempts = 1
            ok = not failed.intersection(grp)
            while not ok and attempts < max_attempts:
                attempts += 1
                ok = not (failure_rate > 0 and (rng.random(len(grp)) < failure_rate).any())
            tally[grp] = attempts
            if not ok:
                result.gave_up.append((r, grp))
                continue
            idx = list(grp)
            sums[idx] = sums[idx].mean(axis=0)
            wts[idx] = wts[idx].mean()
        result.attempts.append(tally)
    out = sums / wts[:, None]
    result.values = out[:, 0] if squeeze else out
    result.weights = wts
    return result
