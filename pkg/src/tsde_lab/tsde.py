"""Thompson sampling with dynamic episodes and a settling phase back to the empty state."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bayes import PosteriorGrid, sample_index
from .mdp import DEFAULT_STEP_CAP, SettlingOverflow, State, l1_norm, l_inf_norm

FIRST = "first-criterion"
SECOND = "second-criterion"
HORIZON = "horizon"


def streams(seed) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for environment noise and for the learner's own draws."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_ss, alg_ss = ss.spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(alg_ss)


@dataclass
class EpisodeLog:
    k: int
    t_k: int
    t_tilde: int  # end of the active phase
    t_next: int  # start of the next episode (T + 1 if clipped)
    theta_index: int
    stop_reason: str

    @property
    def T_k(self) -> int:
        return self.t_next - self.t_k

    @property
    def T_tilde(self) -> int:
        return self.t_tilde - self.t_k

    @property
    def E_k(self) -> int:
        return self.T_k - self.T_tilde


@dataclass
class RunTrace:
    algorithm: str
    costs: np.ndarray
    actions: np.ndarray
    tv: np.ndarray
    episodes: list[EpisodeLog] = field(default_factory=list)
    M_T: int = 0
    K_M: int = 0
    theta_star_index: int = -1
    final_log_weights: np.ndarray | None = None

    @property
    def T(self) -> int:
        return len(self.costs)

    @property
    def K_T(self) -> int:
        return sum(1 for ep in self.episodes if ep.t_k <= self.T)


def stopping_check(t: int, t_k: int, T_tilde_prev: int, counts: dict, snapshot: dict, touched=None) -> bool:
    """True when the active phase must end before step t is taken."""
    if t > t_k + T_tilde_prev:
        return True
    keys = counts.keys() if touched is None else touched
    return any(counts[key] > 2 * snapshot.get(key, 0) for key in keys)


def run_tsde(
    env,
    prior: PosteriorGrid,
    policies,
    loglik,
    T: int,
    seed,
    theta_star_index: int = -1,
    step_cap: int = DEFAULT_STEP_CAP,
) -> RunTrace:
    """Run the learner for T steps against ``env``.

    ``policies[i]`` is the optimal policy of grid point i and ``loglik(x, a, y)``
    returns per-grid-point log-likelihoods of one observed transition.
    """
    if T < 1:
        raise ValueError("horizon must be positive")
    env_rng, alg_rng = streams(seed)
    post = prior.copy()
    costs = np.zeros(T)
    actions = np.zeros(T, dtype=np.int8)
    tv = np.zeros(T)
    episodes: list[EpisodeLog] = []
    counts: dict[tuple[State, int], int] = {}
    truth = theta_star_index

    x: State = env.initial_state
    peak = 0
    t = 1
    T_tilde_prev = 1
    k = 0
    k_second = 0
    while t <= T:
        k += 1
        t_k = t
        snapshot = dict(counts)
        idx = sample_index(post, alg_rng)
        policy = policies[idx]
        reason = HORIZON
        # active phase: learn while neither criterion has fired
        while t <= T:
            if t > t_k + T_tilde_prev:
                reason = FIRST
                break
            a = policy(x)
            key = (x, a)
            n_visits = counts.get(key, 0) + 1
            counts[key] = n_visits
            y = env.sample_next(x, a, env_rng)
            costs[t - 1] = l1_norm(x)
            actions[t - 1] = a
            peak = max(peak, l_inf_norm(x))
            post.update_loglik(loglik(x, a, y))
            if truth >= 0:
                tv[t - 1] = 1.0 - math.exp(post.log_weights[truth])
            x = y
            t += 1
            if n_visits > 2 * snapshot.get(key, 0):
                reason = SECOND
                break
        t_tilde = t
        if reason == SECOND:
            k_second += 1
        # settling: same policy, no learning, until the system empties
        frozen_tv = tv[t - 2] if t >= 2 else 0.0
        settle = 0
        while t <= T and l1_norm(x) != 0:
            if settle >= step_cap:
                raise SettlingOverflow(f"episode {k} (t_k={t_k}) did not settle within {step_cap} steps")
            a = policy(x)
            costs[t - 1] = l1_norm(x)
            actions[t - 1] = a
            peak = max(peak, l_inf_norm(x))
            tv[t - 1] = frozen_tv
            x = env.sample_next(x, a, env_rng)
            t += 1
            settle += 1
        if t > T and l1_norm(x) != 0:
            reason = HORIZON
        episodes.append(EpisodeLog(k, t_k, min(t_tilde, T + 1), min(t, T + 1), idx, reason))
        T_tilde_prev = t_tilde - t_k
    return RunTrace(
        algorithm="tsde",
        costs=costs,
        actions=actions,
        tv=tv,
        episodes=episodes,
        M_T=peak,
        K_M=k_second,
        theta_star_index=truth,
        final_log_weights=post.log_weights.copy(),
    )


def run_policy(env, policy, T: int, seed) -> RunTrace:
    """Play one fixed policy, drawing environment noise exactly as the learners do."""
    env_rng, _ = streams(seed)
    costs = np.zeros(T)
    actions = np.zeros(T, dtype=np.int8)
    x = env.initial_state
    peak = 0
    for t in range(T):
        a = policy(x)
        costs[t] = l1_norm(x)
        actions[t] = a
        peak = max(peak, l_inf_norm(x))
        x = env.sample_next(x, a, env_rng)
    return RunTrace(algorithm="fixed", costs=costs, actions=actions, tv=np.zeros(T), M_T=peak)


def compute_regret(costs, J_star: float) -> np.ndarray:
    """Cumulative cost minus t times the optimal average cost, for t = 1..T."""
    costs = np.asarray(costs.costs if isinstance(costs, RunTrace) else costs, dtype=float)
    return np.cumsum(costs) - J_star * np.arange(1, len(costs) + 1)


@dataclass(frozen=True)
class AuditReport:
    K_T: int
    K_M: int
    M_T: int
    K_T_bound: float
    K_M_bound: float

    @property
    def K_T_pass(self) -> bool:
        return self.K_T <= self.K_T_bound

    @property
    def K_M_pass(self) -> bool:
        return self.K_M <= self.K_M_bound

    @property
    def passed(self) -> bool:
        return self.K_T_pass and self.K_M_pass


def episode_bounds(T: int, M: int, n_actions: int, dim: int) -> tuple[float, float]:
    """Almost-sure caps on (second-criterion episodes, all episodes) given the max state M."""
    pairs = n_actions * (M + 1) ** dim
    log_T = math.log2(T)
    return 2 * pairs * log_T, 2 * math.sqrt(pairs * T * log_T)


def episode_bound_audit(trace: RunTrace, n_actions: int, dim: int) -> AuditReport:
    if trace.T < 2:
        raise ValueError("audit needs T >= 2")
    km_bound, kt_bound = episode_bounds(trace.T, trace.M_T, n_actions, dim)
    return AuditReport(trace.K_T, trace.K_M, trace.M_T, kt_bound, km_bound)
