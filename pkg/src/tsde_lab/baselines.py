"""Comparison learners: reward-biased MLE and certainty equivalence with forced exploration."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .bayes import PosteriorGrid, penalized_map_index
from .mdp import DEFAULT_STEP_CAP, SettlingOverflow, l1_norm, l_inf_norm
from .tsde import RunTrace, streams


def at_schedule(delta: float, p: int, i: int) -> tuple[int, int]:
    """(b_i, a_i) of the forced-exploration schedule; a_i counts recurrence intervals."""
    if i < 1 or delta <= 0 or p < 1:
        raise ValueError("need i >= 1, delta > 0, p >= 1")
    exponent = 1.0 / (1.0 + delta)
    b = [math.floor(math.exp(k**exponent)) for k in range(1, i + 1)]
    return b[-1], sum(b) + i * p


def run_rbmle(
    env,
    prior: PosteriorGrid,
    policies,
    costs: Sequence[float],
    loglik,
    alpha: float,
    T: int,
    seed,
    theta_star_index: int = -1,
) -> RunTrace:
    """Play the optimal policy of the cost-penalised likelihood maximiser at every step."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    env_rng, _ = streams(seed)
    post = prior.copy()
    J = np.asarray(costs, dtype=float)
    prior_mode = int(np.argmax(post.log_weights))
    cost_trace = np.zeros(T)
    actions = np.zeros(T, dtype=np.int8)
    tv = np.zeros(T)
    x = env.initial_state
    peak = 0
    for t in range(1, T + 1):
        idx = prior_mode if t == 1 else penalized_map_index(post, J, alpha, t)
        a = policies[idx](x)
        y = env.sample_next(x, a, env_rng)
        cost_trace[t - 1] = l1_norm(x)
        actions[t - 1] = a
        peak = max(peak, l_inf_norm(x))
        post.update_loglik(loglik(x, a, y))
        if theta_star_index >= 0:
            tv[t - 1] = 1.0 - math.exp(post.log_weights[theta_star_index])
        x = y
    return RunTrace(
        algorithm="rbmle",
        costs=cost_trace,
        actions=actions,
        tv=tv,
        M_T=peak,
        theta_star_index=theta_star_index,
        final_log_weights=post.log_weights.copy(),
    )


def cycle_cost_rate(total_cost, total_steps) -> np.ndarray:
    """Renewal-reward estimate of each policy's average cost; untried policies get +inf."""
    total_cost = np.asarray(total_cost, dtype=float)
    total_steps = np.asarray(total_steps, dtype=float)
    out = np.full(total_cost.shape, np.inf)
    tried = total_steps > 0
    out[tried] = total_cost[tried] / total_steps[tried]
    return out


class _Clock:
    """Shared step counter and trace buffers for a horizon-clipped rollout."""

    def __init__(self, env, T: int, rng):
        self.env = env
        self.T = T
        self.rng = rng
        self.t = 1
        self.x = env.initial_state
        self.costs = np.zeros(T)
        self.actions = np.zeros(T, dtype=np.int8)
        self.peak = 0

    @property
    def done(self) -> bool:
        return self.t > self.T

    def cycle(self, policy, step_cap: int) -> tuple[float, int, bool]:
        """One recurrence interval of the empty state; returns (cost, steps, completed)."""
        cost, steps = 0.0, 0
        while not self.done:
            if steps >= step_cap:
                raise SettlingOverflow(f"recurrence interval exceeded {step_cap} steps at t={self.t}")
            a = policy(self.x)
            c = l1_norm(self.x)
            self.costs[self.t - 1] = c
            self.actions[self.t - 1] = a
            self.peak = max(self.peak, l_inf_norm(self.x))
            self.x = self.env.sample_next(self.x, a, self.rng)
            self.t += 1
            cost += c
            steps += 1
            if l1_norm(self.x) == 0:
                return cost, steps, True
        return cost, steps, False


def run_agrawal_teneketzis(
    env,
    policy_set: Sequence,
    T: int,
    delta: float,
    seed,
    step_cap: int = DEFAULT_STEP_CAP,
) -> RunTrace:
    """Alternate one cycle of every candidate policy with exploitation of the empirical best."""
    if not policy_set:
        raise ValueError("empty policy set")
    env_rng, _ = streams(seed)
    clock = _Clock(env, T, env_rng)
    p = len(policy_set)
    total_cost = np.zeros(p)
    total_steps = np.zeros(p)
    i = 0
    a_prev = 0
    while not clock.done:
        i += 1
        for j, policy in enumerate(policy_set):
            cost, steps, completed = clock.cycle(policy, step_cap)
            if completed:
                total_cost[j] += cost
                total_steps[j] += steps
            if clock.done:
                break
        _, a_i = at_schedule(delta, p, i)
        best = policy_set[int(np.argmin(cycle_cost_rate(total_cost, total_steps)))]
        for _ in range(a_i - a_prev):
            if clock.done:
                break
            clock.cycle(best, step_cap)
        a_prev = a_i
    return RunTrace(
        algorithm="at",
        costs=clock.costs,
        actions=clock.actions,
        tv=np.zeros(T),
        M_T=clock.peak,
    )
