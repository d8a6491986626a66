"""Two heterogeneous servers fed by one buffer, observed at uniformized event epochs.

State is (x0, x1, x2): jobs waiting in the buffer and the busy flags of the
fast and slow servers. Actions index the alphabet (h, b, 1, 2): hold, send one
job to each server, send a job to server 1, send a job to server 2.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mdp import KernelEnv, State, TransitionDistribution

HOLD, BOTH, ONE, TWO = 0, 1, 2, 3
ACTION_NAMES = ("h", "b", "1", "2")
N_ACTIONS = 4
DIM = 3


class TruncationError(RuntimeError):
    pass


class NoCrossingError(RuntimeError):
    pass


@dataclass(frozen=True)
class M1Params:
    lam: float
    theta1: float
    theta2: float
    delta: float = 0.2
    R: float = 3.8

    def validate(self) -> "M1Params":
        if self.lam <= 0 or self.theta2 <= 0:
            raise ValueError("rates must be positive")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 0.5)")
        if self.theta1 < self.theta2:
            raise ValueError("theta1 must be at least theta2")
        if self.theta1 / self.theta2 > self.R + 1e-9:
            raise ValueError("service-rate ratio exceeds R")
        if self.lam / (self.theta1 + self.theta2) > (1 - self.delta) / (1 + self.delta) + 1e-12:
            raise ValueError("parameters violate the stability margin")
        return self


def normalized_rates(p: M1Params) -> tuple[float, float, float]:
    total = p.lam + p.theta1 + p.theta2
    lam_n = p.lam / total
    th1_n = p.theta1 / total
    return lam_n, th1_n, 1.0 - lam_n - th1_n


def post_action(x: State, a: int) -> State:
    x0, x1, x2 = x
    if a == ONE and x0 >= 1 and x1 == 0:
        return (x0 - 1, 1, x2)
    if a == TWO and x0 >= 1 and x2 == 0:
        return (x0 - 1, x1, 1)
    if a == BOTH and x0 >= 2 and x1 == 0 and x2 == 0:
        return (x0 - 2, 1, 1)
    return x


def feasible_actions(x: State) -> tuple[int, ...]:
    x0, x1, x2 = x
    acts = [HOLD]
    if x0 >= 2 and x1 == 0 and x2 == 0:
        acts.append(BOTH)
    if x0 >= 1 and x1 == 0:
        acts.append(ONE)
    if x0 >= 1 and x2 == 0:
        acts.append(TWO)
    return tuple(acts)


def transition(p: M1Params, x: State, a: int) -> TransitionDistribution:
    lam_n, th1_n, th2_n = normalized_rates(p)
    z0, z1, z2 = post_action(x, a)
    atoms = [
        ((z0 + 1, z1, z2), lam_n),
        ((z0, 0, z2), th1_n),  # a dummy event when z1 == 0
        ((z0, z1, 0), th2_n),
    ]
    return TransitionDistribution.from_atoms(atoms)


def threshold_action(t: int, x: State) -> int:
    x0, x1, x2 = x
    if x0 == 0 or (x1 == 1 and x2 == 1):
        return HOLD
    if x1 == 0:
        return ONE
    # server 1 busy, server 2 idle, jobs waiting
    return TWO if x0 + x1 + x2 >= t + 1 else HOLD


class ThresholdPolicy:
    """Use the slow server only once total occupancy exceeds the threshold."""

    def __init__(self, t: int):
        if t < 1:
            raise ValueError("threshold must be a positive integer")
        self.t = int(t)

    def __call__(self, x: State) -> int:
        return threshold_action(self.t, x)

    def __repr__(self) -> str:
        return f"ThresholdPolicy(t={self.t})"

    def __eq__(self, other) -> bool:
        return isinstance(other, ThresholdPolicy) and other.t == self.t

    def __hash__(self) -> int:
        return hash(("threshold", self.t))


class Model1Env(KernelEnv):
    dim = DIM
    n_actions = N_ACTIONS

    def __init__(self, params: M1Params):
        self.params = params
        self.rates = normalized_rates(params)

    @property
    def theta(self) -> tuple[float, float]:
        return (self.params.theta1, self.params.theta2)

    def feasible_actions(self, x: State) -> tuple[int, ...]:
        return feasible_actions(x)

    def transition(self, x: State, a: int) -> TransitionDistribution:
        return transition(self.params, x, a)


def _threshold_chain(p: M1Params, t: int, trunc: int) -> sp.csr_matrix:
    """Sparse kernel of the threshold chain with arrivals blocked at x0 = trunc."""
    lam_n, th1_n, th2_n = normalized_rates(p)
    x0 = np.repeat(np.arange(trunc + 1), 4)
    x1 = np.tile([0, 0, 1, 1], trunc + 1)
    x2 = np.tile([0, 1, 0, 1], trunc + 1)
    n = x0.size
    # threshold rule applied to every state at once
    to_one = (x0 >= 1) & (x1 == 0)
    to_two = (x0 >= 1) & (x1 == 1) & (x2 == 0) & (x0 + x1 + x2 >= t + 1)
    z0 = x0 - to_one - to_two
    z1 = np.where(to_one, 1, x1)
    z2 = np.where(to_two, 1, x2)

    def index(a0, a1, a2):
        return a0 * 4 + a1 * 2 + a2

    src = np.arange(n)
    arrive = index(np.minimum(z0 + 1, trunc), z1, z2)
    dep1 = index(z0, 0, z2)
    dep2 = index(z0, z1, 0)
    rows = np.concatenate([src, src, src])
    cols = np.concatenate([arrive, dep1, dep2])
    vals = np.concatenate([np.full(n, lam_n), np.full(n, th1_n), np.full(n, th2_n)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _stationary_mean_occupancy(p: M1Params, t: int, trunc: int) -> float:
    P = _threshold_chain(p, t, trunc)
    n = P.shape[0]
    A = (P.T - sp.identity(n, format="csr")).tocsr()
    # swap one balance equation for the normalisation constraint
    A = sp.vstack([sp.csr_matrix(np.ones((1, n))), A[1:]])
    rhs = np.zeros(n)
    rhs[0] = 1.0
    pi = spla.spsolve(A.tocsc(), rhs)
    occ = np.repeat(np.arange(trunc + 1), 4) + np.tile([0, 1, 1, 2], trunc + 1)
    return float(pi @ occ)


def stationary_cost(
    p: M1Params, t: int, trunc: int = 200, tol: float = 1e-8, max_trunc: int = 12_800
) -> float:
    """Long-run mean of ||X||_1 under the threshold policy, by truncated balance equations.

    The truncation is doubled until successive answers agree within ``tol``.
    """
    current = _stationary_mean_occupancy(p, t, trunc)
    while True:
        if 2 * trunc > max_trunc:
            raise TruncationError(f"J^{t} not stable under doubling up to trunc={trunc}")
        refined = _stationary_mean_occupancy(p, t, 2 * trunc)
        if abs(refined - current) < tol:
            return refined
        trunc *= 2
        current = refined


def threshold_cap(p: M1Params) -> int:
    return math.ceil(math.sqrt(2) * p.theta1 / p.theta2) + 1


def optimal_threshold(p: M1Params, tie_tol: float = 1e-10) -> int:
    """Smallest i with J^i < J^{i+1}, scanning up to the rate-ratio cap."""
    cap = threshold_cap(p)
    current = stationary_cost(p, 1)
    for i in range(1, cap + 1):
        following = stationary_cost(p, i + 1)
        if following - current > tie_tol:
            return i
        current = following
    raise NoCrossingError(f"no threshold crossing up to {cap} for {p}")


@lru_cache(maxsize=None)
def _oracle_cached(lam: float, theta1: float, theta2: float) -> tuple[int, float]:
    p = M1Params(lam, theta1, theta2)
    t_star = optimal_threshold(p)
    return t_star, stationary_cost(p, t_star)


def policy_oracle(p: M1Params) -> tuple[ThresholdPolicy, float]:
    t_star, cost = _oracle_cached(float(p.lam), float(p.theta1), float(p.theta2))
    return ThresholdPolicy(t_star), cost


def reachable_states(p: M1Params, t: int, limit: int = 10_000) -> set[State]:
    """Pre-action states visited from the empty system, breadth first up to ``limit`` states."""
    start = (0, 0, 0)
    seen = {start}
    queue = deque([start])
    while queue and len(seen) < limit:
        x = queue.popleft()
        for y in transition(p, x, threshold_action(t, x)).states:
            if y not in seen:
                seen.add(y)
                queue.append(y)
    return seen


def in_restricted_space(x: State, t: int) -> bool:
    """Membership in the state set on which the drift inequalities are claimed."""
    x0, x1, x2 = x
    if x1 == 0 and x2 == 0 and x0 >= min(t, 2):
        return False
    return x != (0, 1, 1)


class M1LikelihoodTable:
    """Per-parameter log-likelihoods of one observed transition, vectorised over a grid."""

    def __init__(self, lam: float, thetas):
        th = np.asarray(thetas, dtype=float)
        total = lam + th[:, 0] + th[:, 1]
        lam_n = lam / total
        th1_n = th[:, 0] / total
        th2_n = 1.0 - lam_n - th1_n
        with np.errstate(divide="ignore"):
            self.log_arrival = np.log(lam_n)
            self.log_dep1 = np.log(th1_n)
            self.log_dep2 = np.log(th2_n)
            self.log_idle_both = np.log(th1_n + th2_n)
        self.neg_inf = np.full(len(th), -np.inf)

    def __call__(self, x: State, a: int, y: State) -> np.ndarray:
        z0, z1, z2 = post_action(x, a)
        if y == (z0 + 1, z1, z2):
            return self.log_arrival
        if y == (z0, z1, z2):
            if z1 == 0 and z2 == 0:
                return self.log_idle_both
            if z1 == 0:
                return self.log_dep1
            if z2 == 0:
                return self.log_dep2
            return self.neg_inf
        if z1 == 1 and y == (z0, 0, z2):
            return self.log_dep1
        if z2 == 1 and y == (z0, z1, 0):
            return self.log_dep2
        return self.neg_inf
