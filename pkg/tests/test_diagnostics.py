import dataclasses
import math

import numpy as np
import pytest

from tsde_lab import diagnostics as dg
from tsde_lab import model_one as m1
from tsde_lab import model_two as m2
from tsde_lab.grids import model_two_grid
from tsde_lab.mdp import TransitionDistribution

P1 = m1.M1Params(0.5, 1.0, 0.5)
P2 = m2.M2Params(0.5, 1.0, 0.5)


def test_m1_geometric_constants():
    spec = dg.m1_geom_drift_params(P1, 2)
    assert spec.extras["gamma"] == pytest.approx(0.04375, abs=1e-15)
    assert spec.V((1, 1, 0)) == pytest.approx(1.5625)
    assert spec.alpha == 1.0
    for t in range(1, 8):
        assert dg.m1_geom_drift_params(P1, t).in_C((0, 0, 0))


def test_m1_polynomial_constants():
    spec = dg.m1_poly_drift_params(P1, 2)
    assert spec.beta == pytest.approx(0.5)
    assert spec.V((2, 1, 0)) == 9
    assert spec.alpha == 0.5


def test_m1_geometric_drift_holds_and_negative_control():
    chain = dg.m1_chain(P1, 2)
    spec = dg.m1_geom_drift_params(P1, 2)
    box = dg.m1_box(60, 2)
    expect = dg.kernel_expectation(chain, spec.V)
    assert dg.verify_drift(expect, spec, box) == []
    # off C the exact drift is -2 beta V, so only a factor above two must fail
    tight = dataclasses.replace(spec, beta=2 * spec.beta)
    assert dg.verify_drift(expect, tight, box) == []
    inflated = dataclasses.replace(spec, beta=3 * spec.beta)
    assert dg.verify_drift(expect, inflated, box) != []


def test_m1_polynomial_drift_holds():
    chain = dg.m1_chain(P1, 2)
    spec = dg.m1_poly_drift_params(P1, 2)
    assert dg.verify_drift(dg.kernel_expectation(chain, spec.V), spec, dg.m1_box(60, 2)) == []


def test_m1_drift_fails_only_off_the_restricted_space():
    chain = dg.m1_chain(P1, 3)
    spec = dg.m1_geom_drift_params(P1, 3)
    bad = dg.verify_drift(dg.kernel_expectation(chain, spec.V), spec, dg.m1_box(30))
    assert bad and all(not m1.in_restricted_space(x, 3) for x in bad)


def test_overflow_is_reported():
    spec = dg.m1_geom_drift_params(P1, 2)
    chain = dg.m1_chain(P1, 2)
    with pytest.raises(dg.VOverflowError):
        dg.drift_records(dg.kernel_expectation(chain, spec.V), spec, [(20_000, 0, 0)])


def test_exceptional_states_need_the_excursion_term():
    chain = dg.m1_chain(P1, 2)
    spec = dg.m1_geom_drift_params(P1, 2)
    exc = dg.exceptional_states(dg.kernel_expectation(chain, spec.V), spec, dg.m1_box(20, 2))
    assert exc and all(spec.in_C(x) for x in exc)


def test_m2_geometric_constants():
    base = dg.m2_geom_constants(P2, 2.0)["a"]
    for th in model_two_grid():
        for w in m2.OMEGA_GRID:
            k = dg.m2_geom_constants(m2.M2Params(0.5, *th), w)
            assert k["zeta1"] < 1 and k["zeta2"] < 1
            if w == 2.0:
                assert k["a"] == base
    spec = dg.m2_geom_drift_params(P2, 2.0)
    a = spec.extras["a"]
    v0 = (2.0 * math.exp(a / 2.0) + math.exp(a)) / 3.0
    assert spec.V((0, 0)) == pytest.approx(v0)
    assert v0 >= 1
    assert spec.in_C((0, 0))


def test_m2_polynomial_constants():
    k = dg.m2_poly_constants(m2.M2Params(0.5, 1.0, 0.5, R=2.0), 1.5)
    assert k["C_limits"][1] == 468
    spec = dg.m2_poly_drift_params(P2, 1.5)
    assert spec.V((1, 1)) == pytest.approx(1 / 1.5 + 1)
    for th in model_two_grid():
        for w in m2.OMEGA_GRID:
            q = m2.M2Params(0.5, *th)
            assert dg.m2_poly_constants(q, w)["beta"] <= math.sqrt(q.c_R * q.R)


def test_m2_polynomial_drift_holds():
    spec = dg.m2_poly_drift_params(P2, 1.5)
    expect = dg.m2_drift_expectation(P2, 1.5, spec, 60)
    assert dg.verify_drift(expect, spec, dg.m2_box(60)) == []


def test_m2_separable_expectation_matches_full_kernel():
    spec = dg.m2_poly_drift_params(P2, 2.5)
    fast = dg.m2_drift_expectation(P2, 2.5, spec, 20)
    for x in [(0, 0), (3, 7), (20, 1), (12, 12)]:
        a = m2.assign(2.5, x)
        exact = m2.transition(P2, x, a).expect(spec.V)
        assert fast(x) == pytest.approx(exact, rel=1e-12)


def test_poly_moment_bound_examples():
    params = dg.PolyBoundParams(beta_p=0.5, b_p=9.0, alpha_p=0.5, log_alpha_C=math.log(2.0))
    assert dg.poly_moment_bound(1, 4.0, params) == pytest.approx(44.0)
    zero_b = dg.PolyBoundParams(beta_p=0.5, b_p=0.0, alpha_p=0.5, log_alpha_C=0.0)
    assert dg.poly_moment_bound(1, 1.0, zero_b) == pytest.approx(2.0)
    values = [dg.poly_moment_bound(2, v, params) for v in (1, 4, 16, 64)]
    assert values == sorted(values)
    with pytest.raises(ValueError):
        dg.poly_moment_bound(3, 1.0, params)


def test_geom_tail_bound_examples():
    params = dg.GeomBoundParams(gamma_g=0.5, b_g=2.0, C_size=1, max_E_tau=1.0)
    assert params.b_tilde == pytest.approx(14.0)
    assert params.gamma_tilde == pytest.approx(13 / 14)
    assert params.c == pytest.approx(2 * 196 / 13)
    assert dg.geom_tail_bound(0, params) == pytest.approx(30.1538, abs=1e-4)
    for n in range(10):
        ratio = dg.geom_tail_bound(n + 1, params) / dg.geom_tail_bound(n, params)
        assert ratio == pytest.approx(13 / 14)


def test_resolvent_weight_on_a_collapsing_chain():
    to_zero = lambda x: TransitionDistribution.from_atoms([((0,), 1.0)])
    assert dg.resolvent_weight(to_zero, (0,)) == pytest.approx(0.5)
    assert dg.resolvent_weight(to_zero, (3,)) == pytest.approx(0.25)


def test_m2_empty_prob_is_one_step_law():
    x = (3, 2)
    a = m2.assign(2.0, x)
    direct = m2.transition(P2, x, a).prob((0, 0))
    assert math.exp(dg.m2_log_empty_prob(P2, 2.0, x)) == pytest.approx(direct)


def test_hitting_stats_on_decrement(decrement_env, rng):
    stats = dg.empirical_hitting_stats(decrement_env, lambda x: 0, (3,), 50, rng, tail_max=5)
    assert np.all(stats.samples == 3)
    assert stats.moments[1][0] == 3 and stats.moments[2][0] == 9
    assert list(stats.tails) == [1.0, 1.0, 0.0, 0.0, 0.0]


def test_hitting_stats_on_toy_chain(toy_chain, rng):
    stats = dg.empirical_hitting_stats(toy_chain, lambda x: 0, (2,), 20_000, rng)
    mean, se = stats.moments[1]
    assert abs(mean - 3.0) <= 3 * se


def test_block_maxima_grow_logarithmically():
    rng = np.random.default_rng(0)
    samples = rng.geometric(0.3, size=10**5)
    stats = dg.summarize_hitting(samples)
    assert set(stats.block_max_means) == {100, 1_000, 10_000}
    assert dg.block_max_growth_ok(stats.block_max_means)
    assert not dg.block_max_growth_ok({100: 1.0, 1000: 100.0})


def test_upper_mean_is_above_the_mean():
    x = np.arange(100, dtype=float)
    assert dg.upper_mean(x) > x.mean()
