import math

import mpmath
import numpy as np
import pytest

from tsde_lab.baselines import _Clock, at_schedule, cycle_cost_rate, run_agrawal_teneketzis, run_rbmle
from tsde_lab.bayes import PosteriorGrid
from tsde_lab.families import model_one_family
from tsde_lab.mdp import KernelEnv, TransitionDistribution
from tsde_lab.tsde import run_policy

THETAS = [(1.0, 0.5), (1.9, 0.5), (1.5, 1.4)]


@pytest.fixture(scope="module")
def small_family():
    return model_one_family(0.5, thetas=THETAS)


def test_schedule_examples():
    assert at_schedule(3, 5, 1) == (2, 7)
    assert at_schedule(3, 5, 2) == (3, 15)
    with pytest.raises(ValueError):
        at_schedule(3, 5, 0)


@pytest.mark.parametrize("delta", [3, 3.5])
def test_schedule_matches_high_precision(delta):
    mpmath.mp.dps = 50
    p = 7
    total = 0
    prev_a = 0
    for i in range(1, 51):
        b_ref = int(mpmath.floor(mpmath.exp(mpmath.power(i, mpmath.mpf(1) / (1 + mpmath.mpf(delta))))))
        total += b_ref
        b, a = at_schedule(delta, p, i)
        assert b == b_ref >= 1
        assert a == total + i * p
        assert a - prev_a == b + p > 0
        prev_a = a


class RouteEnv(KernelEnv):
    """From 0 the action picks a level to jump to; every other state returns to 0."""

    dim = 1
    n_actions = 2

    def transition(self, x, a):
        if x[0] == 0:
            return TransitionDistribution.from_atoms([((a + 1,), 1.0)])
        return TransitionDistribution.from_atoms([((0,), 1.0)])


def test_at_exploits_the_cheaper_stub_policy():
    cheap = lambda x: 0  # cycle cost 1
    dear = lambda x: 1  # cycle cost 2
    trace = run_agrawal_teneketzis(RouteEnv(), [cheap, dear], 400, 3.0, seed=0)
    # every cycle takes two steps; super-episode i spends 2 exploration cycles then b_i + 2 exploit cycles
    t = 0
    i = 1
    a_prev = 0
    while t < 400:
        t += 4  # exploration
        _, a_i = at_schedule(3.0, 2, i)
        span = 2 * (a_i - a_prev)
        assert np.all(trace.actions[t : t + span : 2] == 0)
        t += span
        a_prev = a_i
        i += 1


def test_at_single_policy_is_plain_policy(small_family):
    fam = small_family
    pol = fam.policies[0]
    trace = run_agrawal_teneketzis(fam.env(0), [pol], 3000, 3.5, seed=4)
    alone = run_policy(fam.env(0), pol, 3000, 4)
    assert np.array_equal(trace.costs, alone.costs)


class RenewalEnv(KernelEnv):
    """Cycle 0 -> k -> 0 with k uniform on {1, 2, 3}: cost k over 2 steps."""

    dim = 1
    n_actions = 1

    def transition(self, x, a):
        if x[0] == 0:
            return TransitionDistribution.from_atoms([((k,), 1 / 3) for k in (1, 2, 3)])
        return TransitionDistribution.from_atoms([((0,), 1.0)])


def test_cycle_ratio_estimator_is_consistent():
    n = 10_000
    clock = _Clock(RenewalEnv(), 10**6, np.random.default_rng(8))
    costs, steps = [], []
    for _ in range(n):
        c, s, done = clock.cycle(lambda x: 0, 100)
        assert done
        costs.append(c)
        steps.append(s)
    rate = cycle_cost_rate([sum(costs)], [sum(steps)])[0]
    # true rate: E[k] / 2 = 1; cycle costs have variance 2/3
    se = math.sqrt(2 / 3 / n) / 2
    assert abs(rate - 1.0) <= 3 * se
    assert cycle_cost_rate([1.0, 0.0], [2.0, 0.0])[1] == np.inf


def test_rbmle_point_mass_grid(small_family):
    fam = small_family
    prior = PosteriorGrid.uniform([fam.thetas[2]])
    table = lambda x, a, y: fam.loglik(x, a, y)[2:3]
    trace = run_rbmle(fam.env(2), prior, [fam.policies[2]], fam.costs[2:3], table, 0.5, 1500, 6, 0)
    alone = run_policy(fam.env(2), fam.policies[2], 1500, 6)
    assert np.array_equal(trace.actions, alone.actions)


def test_rbmle_huge_alpha_plays_lowest_cost_model(small_family):
    fam = small_family
    prior = PosteriorGrid.uniform(fam.thetas)
    trace = run_rbmle(fam.env(0), prior, fam.policies, fam.costs, fam.loglik, 1e9, 1500, 6, 0)
    best = int(np.argmin(fam.costs))
    alone = run_policy(fam.env(0), fam.policies[best], 1500, 6)
    assert np.array_equal(trace.actions[1:], alone.actions[1:])


def test_rbmle_equal_costs_reduce_to_mle():
    from tsde_lab.bayes import penalized_map_index

    post = PosteriorGrid.uniform(THETAS)
    post.loglik_sums = np.array([-4.0, -2.5, -3.0])
    for t in (2, 10, 1000):
        assert penalized_map_index(post, np.full(3, 0.8), 0.5, t) == int(np.argmax(post.loglik_sums))


def test_baselines_are_deterministic(small_family):
    fam = small_family
    prior = PosteriorGrid.uniform(fam.thetas)
    a = run_rbmle(fam.env(1), prior, fam.policies, fam.costs, fam.loglik, 0.5, 800, 2, 1)
    b = run_rbmle(fam.env(1), prior, fam.policies, fam.costs, fam.loglik, 0.5, 800, 2, 1)
    assert np.array_equal(a.costs, b.costs) and np.array_equal(a.tv, b.tv)
    c = run_agrawal_teneketzis(fam.env(1), fam.policies, 800, 3.5, 2)
    d = run_agrawal_teneketzis(fam.env(1), fam.policies, 800, 3.5, 2)
    assert np.array_equal(c.costs, d.costs)
    with pytest.raises(ValueError):
        run_rbmle(fam.env(1), prior, fam.policies, fam.costs, fam.loglik, 0.0, 10, 2)
    with pytest.raises(ValueError):
        run_agrawal_teneketzis(fam.env(1), [], 10, 3.5, 2)
