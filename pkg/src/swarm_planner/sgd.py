"""SGD on noisy quadratics with varying batch sizes and optional one-step staleness.

The objective is ``f(x) = 0.5 (x - x*)^T A (x - x*)`` so ``f* = 0``. A sampled
gradient is the exact gradient plus isotropic Gaussian noise with per-coordinate
variance ``sigma0**2``; the mean of ``m`` samples therefore has noise
``sigma0 * z / sqrt(m)``. Runs draw one standard-normal vector ``z`` per step
from the seed, so runs that share a seed share noise directions and differ only
through their batch sizes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class Diverged(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadraticProblem:
    A: np.ndarray
    x_star: np.ndarray
    sigma0: float
    mu: float
    L: float

    @property
    def dim(self) -> int:
        return len(self.x_star)

    @classmethod
    def random(cls, dim: int, mu: float, L: float, sigma0: float, seed: int = 0) -> "QuadraticProblem":
        if not 0 < mu <= L:
            raise ValueError("need 0 < mu <= L")
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        eigs = np.linspace(mu, L, dim) if dim > 1 else np.array([mu])
        A = (q * eigs) @ q.T
        A = 0.5 * (A + A.T)
        return cls(A, rng.normal(size=dim), float(sigma0), float(mu), float(L))

    def loss(self, x: np.ndarray) -> float:
        e = x - self.x_star
        return 0.5 * float(e @ self.A @ e)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.A @ (x - self.x_star)

    def sample_grad_mean(self, x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
        """Average of ``m`` independently sampled noisy gradients (explicit draws)."""
        noise = rng.normal(scale=self.sigma0, size=(m, self.dim)).mean(axis=0)
        return self.grad(x) + noise


@dataclass(frozen=True)
class BatchSchedule:
    target: int
    realized: tuple[int, ...]

    def __post_init__(self):
        if any(mk < self.target for mk in self.realized):
            raise ValueError("every realized batch must reach the target")

    @classmethod
    def fixed(cls, m: int, steps: int) -> "BatchSchedule":
        return cls(m, (m,) * steps)

    @classmethod
    def poisson_overshoot(cls, m: int, steps: int, lam: float = 2.0, seed: int = 0) -> "BatchSchedule":
        rng = np.random.default_rng(seed)
        return cls(m, tuple(int(m + k) for k in rng.poisson(lam, size=steps)))


def averaged_gradient_variance(problem: QuadraticProblem, m_k, trials: int, seed: int = 0,
                               x: np.ndarray | None = None) -> float:
    """Monte-Carlo estimate of E||g - grad f||^2 / dim for the mean of ``m_k`` samples.

    ``m_k`` is an int or a sequence with one batch size per trial.
    """
    if trials < 10_000:
        raise ValueError("use at least 10^4 trials")
    rng = np.random.default_rng(seed)
    x = problem.x_star + 1.0 if x is None else x
    sizes = np.full(trials, int(m_k)) if np.isscalar(m_k) else np.asarray(m_k, dtype=int)
    if sizes.shape != (trials,) or sizes.min() < 1:
        raise ValueError("need one positive batch size per trial")
    g_true = problem.grad(x)
    total = 0.0
    for m in np.unique(sizes):
        count = int((sizes == m).sum())
        draws = rng.normal(scale=problem.sigma0, size=(count, int(m), problem.dim)).mean(axis=1)
        g = g_true + draws
        total += float(((g - g_true) ** 2).sum())
    return total / (trials * problem.dim)


@dataclass
class RunOutput:
    losses: np.ndarray  # f(x_k) - f*, k = 0..steps
    final: np.ndarray
    weighted_average: np.ndarray
    gamma0: float


def run_sgd(
    problem: QuadraticProblem,
    schedule: BatchSchedule | Sequence[int],
    steps: int | None = None,
    lr: float | Callable[[int], float] | None = None,
    staleness: int = 0,
    seed: int = 0,
    x0: np.ndarray | None = None,
    divergence_factor: float = 1e6,
) -> RunOutput:
    if staleness not in (0, 1):
        raise ValueError("staleness must be 0 or 1")
    sizes = schedule.realized if isinstance(schedule, BatchSchedule) else tuple(schedule)
    steps = len(sizes) if steps is None else steps
    if len(sizes) < steps:
        raise ValueError("schedule shorter than the run")
    lr = 1.0 / (2.0 * problem.L) if lr is None else lr
    step_size = lr if callable(lr) else (lambda _k, g=float(lr): g)
    rng = np.random.default_rng(seed)
    x = problem.x_star + np.ones(problem.dim) if x0 is None else np.array(x0, dtype=float)
    prev = x.copy()
    losses = np.empty(steps + 1)
    losses[0] = problem.loss(x)
    limit = divergence_factor * max(losses[0], 1e-300)
    # running exponentially weighted average, w_t = (1 - mu gamma)^-(t+1), kept normalized
    gamma0 = step_size(0)
    decay = 1.0 - problem.mu * gamma0
    avg = x.copy()
    wsum = 1.0
    for k in range(steps):
        z = rng.normal(size=problem.dim)
        at = prev if staleness else x
        g = problem.grad(at) + problem.sigma0 * z / math.sqrt(sizes[k])
        prev = x
        x = x - step_size(k) * g
        losses[k + 1] = problem.loss(x)
        if not np.isfinite(losses[k + 1]) or losses[k + 1] > limit:
            raise Diverged(f"loss {losses[k + 1]:.3g} at step {k + 1}")
        # wsum is sum_t w_t / w_k, so the newest iterate enters with weight 1 / wsum
        wsum = wsum * decay + 1.0 if 0 < decay < 1 else wsum + 1.0
        avg = avg + (x - avg) / wsum
    return RunOutput(losses, x, avg, gamma0)


def stepwise_gap(a: np.ndarray, b: np.ndarray, scale: float) -> float:
    return float(np.mean(np.abs(a - b)) / scale)


def bound_rhs(problem: QuadraticProblem, R: float, m: int, T: int) -> float:
    """min of the exponential-decay branch and the 1/T branch, sigma^2 = dim * sigma0^2."""
    L, mu = problem.L, problem.mu
    var = problem.dim * problem.sigma0**2
    sigma = math.sqrt(var)
    first = 64 * L * R**2 * math.exp(-mu * T / (4 * L)) + 36 * var / (mu * m * T)
    second = 2 * L * R**2 / T + 2 * sigma * R / math.sqrt(m * T)
    return min(first, second)


@dataclass(frozen=True)
class BoundCheck:
    holds: bool
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def check_bound(problem: QuadraticProblem, runs: Sequence[RunOutput], m: int, x0: np.ndarray | None = None) -> BoundCheck:
    """Compare the seed-averaged E[f(x_bar) - f*] + mu E||x_T - x*||^2 with the bound."""
    if not runs:
        raise ValueError("need at least one run")
    T = len(runs[0].losses) - 1
    x0 = problem.x_star + np.ones(problem.dim) if x0 is None else np.asarray(x0, dtype=float)
    R = float(np.linalg.norm(x0 - problem.x_star))
    f_bar = np.mean([problem.loss(r.weighted_average) for r in runs])
    dist = np.mean([float(np.sum((r.final - problem.x_star) ** 2)) for r in runs])
    lhs = float(f_bar + problem.mu * dist)
    rhs = bound_rhs(problem, R, m, T)
    return BoundCheck(lhs <= rhs, lhs, rhs)
