"""Shared pieces for countable-state MDPs: states, categorical kernels, rollouts."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

State = tuple[int, ...]
Policy = Callable[[State], int]

SUM_TOL = 1e-12
DEFAULT_STEP_CAP = 10_000_000


class SettlingOverflow(RuntimeError):
    """Raised when a rollout fails to reach the empty state within its step cap."""


def l1_norm(x: State) -> int:
    return sum(x)


def l_inf_norm(x: State) -> int:
    return max(x) if x else 0


def check_state(x: Sequence[int]) -> State:
    state = tuple(int(v) for v in x)
    if any(v < 0 for v in state):
        raise ValueError(f"negative coordinate in state {state}")
    return state


@dataclass(frozen=True)
class TransitionDistribution:
    """Finite categorical law over successor states, kept in lexicographic order."""

    states: tuple[State, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.states) != len(self.probs) or not self.states:
            raise ValueError("states and probs must be nonempty and aligned")
        if any(p <= 0.0 or p > 1.0 for p in self.probs):
            raise ValueError("probabilities must lie in (0, 1]")
        if abs(sum(self.probs) - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {sum(self.probs)!r}")
        if list(self.states) != sorted(self.states) or len(set(self.states)) != len(self.states):
            raise ValueError("states must be distinct and sorted")

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[State, float]]) -> "TransitionDistribution":
        """Merge repeated states, drop zero masses and sort."""
        merged: dict[State, float] = {}
        for state, prob in atoms:
            if prob > 0.0:
                merged[state] = merged.get(state, 0.0) + prob
        ordered = sorted(merged)
        return cls(tuple(ordered), tuple(merged[s] for s in ordered))

    def as_dict(self) -> dict[State, float]:
        return dict(zip(self.states, self.probs))

    def prob(self, y: State) -> float:
        i = bisect.bisect_left(self.states, y)
        if i < len(self.states) and self.states[i] == y:
            return self.probs[i]
        return 0.0

    def expect(self, fn: Callable[[State], float]) -> float:
        return sum(p * fn(s) for s, p in zip(self.states, self.probs))


def sample_successor(dist: TransitionDistribution, u: float) -> State:
    """Inverse-CDF draw with half-open intervals [F(i-1), F(i))."""
    acc = 0.0
    for state, prob in zip(dist.states, dist.probs):
        acc += prob
        if u < acc:
            return state
    # rounding can leave the last cumulative sum a hair below 1
    return dist.states[-1]


class Environment(Protocol):
    """What every queueing environment exposes to the learners."""

    dim: int
    n_actions: int

    def transition(self, x: State, a: int) -> TransitionDistribution: ...

    def cost(self, x: State) -> float: ...

    def feasible_actions(self, x: State) -> tuple[int, ...]: ...

    def sample_next(self, x: State, a: int, rng: np.random.Generator) -> State: ...


class PolicyOracle(Protocol):
    def __call__(self, theta: tuple[float, float]) -> tuple[Policy, float]: ...


class KernelEnv:
    """Base class giving an environment generic sampling and its zero state."""

    dim: int = 1
    n_actions: int = 1

    @property
    def initial_state(self) -> State:
        return (0,) * self.dim

    def cost(self, x: State) -> float:
        return float(l1_norm(x))

    def feasible_actions(self, x: State) -> tuple[int, ...]:
        return tuple(range(self.n_actions))

    def transition(self, x: State, a: int) -> TransitionDistribution:
        raise NotImplementedError

    def sample_next(self, x: State, a: int, rng: np.random.Generator) -> State:
        return sample_successor(self.transition(x, a), rng.random())


def run_until_zero(
    env,
    policy: Policy,
    x0: State,
    rng: np.random.Generator,
    step_cap: int = DEFAULT_STEP_CAP,
) -> tuple[int, float, int]:
    """Roll the policy forward until the chain first sits at the zero state.

    Returns (steps, summed cost of the states left behind, max sup-norm seen).
    """
    x = tuple(x0)
    if l1_norm(x) == 0:
        return 0, 0.0, 0
    steps = 0
    cost_sum = 0.0
    peak = l_inf_norm(x)
    while l1_norm(x) != 0:
        if steps >= step_cap:
            raise SettlingOverflow(f"no return to zero within {step_cap} steps from {x0}")
        cost_sum += env.cost(x)
        x = env.sample_next(x, policy(x), rng)
        steps += 1
        peak = max(peak, l_inf_norm(x))
    return steps, cost_sum, peak


def return_time(
    env, policy: Policy, x0: State, rng: np.random.Generator, step_cap: int = DEFAULT_STEP_CAP
) -> int:
    """First n >= 1 with X(n) = 0 when started at x0 (a recurrence time if x0 is zero)."""
    x = env.sample_next(tuple(x0), policy(tuple(x0)), rng)
    steps, _, _ = run_until_zero(env, policy, x, rng, step_cap)
    return steps + 1
