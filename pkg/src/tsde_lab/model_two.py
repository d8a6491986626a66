"""Two parallel single-server queues observed just before each arrival.

State is (x1, x2). The arriving job is routed by a weighted shortest-queue
rule; each queue then drains independently until the next arrival.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .mdp import KernelEnv, State, TransitionDistribution

ONE, TWO = 0, 1
ACTION_NAMES = ("1", "2")
N_ACTIONS = 2
DIM = 2
OMEGA_GRID = (1.5, 2.0, 2.5, 3.0, 3.5)

MC_BURN_IN = 20_000
MC_HORIZON = 200_000
MC_REPS = 8


@dataclass(frozen=True)
class M2Params:
    lam: float
    theta1: float
    theta2: float
    delta: float = 0.2
    R: float = 3.8
    c_R: float = 1.0

    def validate(self) -> "M2Params":
        if self.lam <= 0 or self.theta2 <= 0:
            raise ValueError("rates must be positive")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 0.5)")
        if self.theta1 < self.theta2 or self.theta1 / self.theta2 > self.R + 1e-9:
            raise ValueError("service-rate ratio must lie in [1, R]")
        if self.lam / (self.theta1 + self.theta2) > (1 - self.delta) / (1 + self.delta) + 1e-12:
            raise ValueError("parameters violate the stability margin")
        if self.c_R < 1:
            raise ValueError("c_R must be at least 1")
        return self

    @property
    def omega_bounds(self) -> tuple[float, float]:
        return 1.0 / (self.c_R * self.R), self.c_R * self.R


def assign(omega: float, x: State) -> int:
    """Route to queue 1 when 1 + x1 <= omega (1 + x2), ties included."""
    return ONE if 1 + x[0] <= omega * (1 + x[1]) else TWO


class WeightedPolicy:
    def __init__(self, omega: float):
        if omega <= 0:
            raise ValueError("weight must be positive")
        self.omega = float(omega)

    def __call__(self, x: State) -> int:
        return ONE if 1 + x[0] <= self.omega * (1 + x[1]) else TWO

    def __repr__(self) -> str:
        return f"WeightedPolicy(omega={self.omega})"

    def __eq__(self, other) -> bool:
        return isinstance(other, WeightedPolicy) and other.omega == self.omega

    def __hash__(self) -> int:
        return hash(("weighted", self.omega))


def departure_dist(lam: float, theta: float, n: int) -> dict[int, float]:
    """Queue length left at the next arrival, starting from n jobs after routing."""
    if n == 0:
        return {0: 1.0}
    stay = theta / (theta + lam)
    leave = lam / (theta + lam)
    out = {0: stay**n}
    out.update((k, leave * stay ** (n - k)) for k in range(1, n + 1))
    return out


def transition(p: M2Params, x: State, a: int) -> TransitionDistribution:
    z1 = x[0] + (a == ONE)
    z2 = x[1] + (a == TWO)
    d1 = departure_dist(p.lam, p.theta1, z1)
    d2 = departure_dist(p.lam, p.theta2, z2)
    # ascending keys in both factors give lexicographic order directly
    states = tuple((k1, k2) for k1 in d1 for k2 in d2)
    probs = tuple(p1 * p2 for p1 in d1.values() for p2 in d2.values())
    return TransitionDistribution(states, probs)


def _geometric_drain(z: int, log_stay: float, u: float) -> int:
    # services completed before the next arrival are Geometric on {0, 1, ...}
    done = math.floor(math.log(u) / log_stay) if u < 1.0 else 0
    return max(z - done, 0)


class Model2Env(KernelEnv):
    dim = DIM
    n_actions = N_ACTIONS

    def __init__(self, params: M2Params):
        self.params = params
        self.log_stay1 = math.log(params.theta1 / (params.theta1 + params.lam))
        self.log_stay2 = math.log(params.theta2 / (params.theta2 + params.lam))

    @property
    def theta(self) -> tuple[float, float]:
        return (self.params.theta1, self.params.theta2)

    def transition(self, x: State, a: int) -> TransitionDistribution:
        return transition(self.params, x, a)

    def sample_next(self, x: State, a: int, rng: np.random.Generator) -> State:
        # one uniform per queue; the product law makes the queues independent
        u1 = 1.0 - rng.random()
        u2 = 1.0 - rng.random()
        z1 = x[0] + (a == ONE)
        z2 = x[1] + (a == TWO)
        return (_geometric_drain(z1, self.log_stay1, u1), _geometric_drain(z2, self.log_stay2, u2))


def _simulate_costs(
    lam: float,
    theta1: float,
    theta2: float,
    omegas: np.ndarray,
    horizon: int,
    burn_in: int,
    reps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Time-averaged occupancy for every (omega, rep) pair, shape (len(omegas), reps).

    All weights share the same uniforms (common random numbers).
    """
    n_w = len(omegas)
    weights = np.repeat(omegas, reps)
    x1 = np.zeros(n_w * reps, dtype=np.int64)
    x2 = np.zeros(n_w * reps, dtype=np.int64)
    acc = np.zeros(n_w * reps)
    log_stay1 = math.log(theta1 / (theta1 + lam))
    log_stay2 = math.log(theta2 / (theta2 + lam))
    block = 4096
    t = 1
    while t <= horizon:
        steps = min(block, horizon - t + 1)
        u = 1.0 - rng.random((steps, 2, reps))
        g1 = np.tile(np.floor(np.log(u[:, 0, :]) / log_stay1).astype(np.int64), n_w)
        g2 = np.tile(np.floor(np.log(u[:, 1, :]) / log_stay2).astype(np.int64), n_w)
        for s in range(steps):
            if t > burn_in:
                acc += x1
                acc += x2
            to_one = (1 + x1) <= weights * (1 + x2)
            x1 = np.maximum(x1 + to_one - g1[s], 0)
            x2 = np.maximum(x2 + ~to_one - g2[s], 0)
            t += 1
    return (acc / (horizon - burn_in)).reshape(n_w, reps)


def mc_cost(
    p: M2Params,
    omega: float,
    horizon: int = MC_HORIZON,
    burn_in: int = MC_BURN_IN,
    reps: int = MC_REPS,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Monte-Carlo long-run occupancy under one weight: (mean, standard error)."""
    if not horizon > burn_in >= 0 or reps < 1:
        raise ValueError("need horizon > burn_in >= 0 and reps >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    per_rep = _simulate_costs(p.lam, p.theta1, p.theta2, np.array([omega]), horizon, burn_in, reps, rng)[0]
    stderr = per_rep.std(ddof=1) / math.sqrt(reps) if reps > 1 else 0.0
    return float(per_rep.mean()), float(stderr)


@dataclass(frozen=True)
class MCConfig:
    horizon: int = MC_HORIZON
    burn_in: int = MC_BURN_IN
    reps: int = MC_REPS
    seed: int = 0


def weight_costs(p: M2Params, omega_grid: Sequence[float], mc: MCConfig = MCConfig()):
    """Mean cost and standard error for every weight in the grid."""
    rng = np.random.default_rng(mc.seed)
    omegas = np.asarray(omega_grid, dtype=float)
    per_rep = _simulate_costs(p.lam, p.theta1, p.theta2, omegas, mc.horizon, mc.burn_in, mc.reps, rng)
    means = per_rep.mean(axis=1)
    if mc.reps > 1:
        errs = per_rep.std(axis=1, ddof=1) / math.sqrt(mc.reps)
    else:
        errs = np.zeros(len(omegas))
    return means, errs


def pick_weight(omega_grid: Sequence[float], means, errs) -> int:
    """Index of the best weight; anything within one stderr of the best goes to the smaller weight."""
    best = int(np.argmin(means))
    order = np.argsort(omega_grid, kind="stable")
    for i in order:
        if means[i] <= means[best] + errs[best]:
            return int(i)
    return best


def best_weight(p: M2Params, omega_grid: Sequence[float] = OMEGA_GRID, mc: MCConfig = MCConfig()):
    """Grid search over weights: (omega*, estimated cost, its stderr)."""
    if not omega_grid:
        raise ValueError("empty weight grid")
    lo, hi = p.omega_bounds
    if any(w < lo - 1e-12 or w > hi + 1e-12 for w in omega_grid):
        raise ValueError(f"weights must lie in [{lo:.4g}, {hi:.4g}]")
    means, errs = weight_costs(p, omega_grid, mc)
    i = pick_weight(omega_grid, means, errs)
    return float(omega_grid[i]), float(means[i]), float(errs[i])


@lru_cache(maxsize=None)
def _oracle_cached(lam, theta1, theta2, omega_grid, mc):
    return best_weight(M2Params(lam, theta1, theta2), omega_grid, mc)


def policy_oracle(
    p: M2Params, omega_grid: Sequence[float] = OMEGA_GRID, mc: MCConfig = MCConfig()
) -> tuple[WeightedPolicy, float]:
    omega, cost, _ = _oracle_cached(float(p.lam), float(p.theta1), float(p.theta2), tuple(omega_grid), mc)
    return WeightedPolicy(omega), cost


class M2LikelihoodTable:
    """Per-parameter log-likelihoods of one observed transition, vectorised over a grid."""

    def __init__(self, lam: float, thetas):
        th = np.asarray(thetas, dtype=float)
        self.log_stay = np.log(th / (th + lam))  # columns: queue 1, queue 2
        self.log_leave = np.log(lam / (th + lam))
        self.size = len(th)

    def _queue(self, j: int, n: int, k: int):
        if k > n:
            return None
        if n == 0:
            return 0.0
        if k == 0:
            return n * self.log_stay[:, j]
        return self.log_leave[:, j] + (n - k) * self.log_stay[:, j]

    def __call__(self, x: State, a: int, y: State) -> np.ndarray:
        z1 = x[0] + (a == ONE)
        z2 = x[1] + (a == TWO)
        q1 = self._queue(0, z1, y[0])
        q2 = self._queue(1, z2, y[1])
        if q1 is None or q2 is None:
            return np.full(self.size, -np.inf)
        return np.zeros(self.size) + q1 + q2
