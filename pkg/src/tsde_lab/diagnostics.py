"""Numerical checks of the stability machinery: drift inequalities and hitting-time bounds."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import model_one, model_two
from .mdp import DEFAULT_STEP_CAP, State, TransitionDistribution, l1_norm, return_time, run_until_zero

DRIFT_TOL = 1e-9


class VOverflowError(OverflowError):
    pass


@dataclass(frozen=True)
class DriftSpec:
    """Delta V(x) <= -beta V(x)^alpha + b 1_C(x)."""

    V: Callable[[State], float]
    alpha: float
    beta: float
    b: float
    in_C: Callable[[State], bool]
    C_states: tuple[State, ...] | None = None
    label: str = ""
    extras: dict = field(default_factory=dict)

    def rhs(self, x: State, v: float) -> float:
        return -self.beta * v**self.alpha + (self.b if self.in_C(x) else 0.0)


@dataclass(frozen=True)
class DriftRecord:
    state: State
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + DRIFT_TOL


def kernel_expectation(kernel: Callable[[State], TransitionDistribution], V) -> Callable[[State], float]:
    """x -> E[V(next state)] computed over the exact finite support."""
    return lambda x: kernel(x).expect(V)


def drift_records(expected_next: Callable[[State], float], spec: DriftSpec, box: Iterable[State]) -> list[DriftRecord]:
    out = []
    for x in box:
        try:
            v = spec.V(x)
            nxt = expected_next(x)
        except OverflowError as exc:
            raise VOverflowError(f"Lyapunov function not representable at {x}") from exc
        if not (math.isfinite(v) and math.isfinite(nxt)):
            raise VOverflowError(f"Lyapunov function not representable at {x}")
        out.append(DriftRecord(x, nxt - v, spec.rhs(x, v)))
    return out


def verify_drift(expected_next, spec: DriftSpec, box: Iterable[State]) -> list[State]:
    """States in the box where the drift inequality fails."""
    return [r.state for r in drift_records(expected_next, spec, box) if not r.passed]


def exceptional_states(expected_next, spec: DriftSpec, box: Iterable[State]) -> list[State]:
    """States that would violate the inequality if the excursion term b were dropped."""
    out = []
    for x in box:
        v = spec.V(x)
        if expected_next(x) - v > -spec.beta * v**spec.alpha + DRIFT_TOL:
            out.append(x)
    return out


# ---- model one -------------------------------------------------------------


def m1_box(radius: int, t: int | None = None) -> list[State]:
    """Buffer levels up to ``radius``; with ``t`` given, only the restricted state set."""
    states = [(x0, x1, x2) for x0 in range(radius + 1) for x1 in (0, 1) for x2 in (0, 1)]
    if t is not None:
        states = [x for x in states if model_one.in_restricted_space(x, t)]
    return states


def m1_chain(p: model_one.M1Params, t: int):
    return lambda x: model_one.transition(p, x, model_one.threshold_action(t, x))


def m1_geom_drift_params(p: model_one.M1Params, t: int) -> DriftSpec:
    """Exponential Lyapunov function in the total occupancy.

    ``extras['gamma']`` is the constant as published; the inequality it
    certifies is P V <= (1 - gamma) V off C, so gamma is the drift rate.
    """
    lam_n, _, _ = model_one.normalized_rates(p)
    growth = -math.log(1 - p.delta)
    gamma = 0.5 - 0.5 * ((1 - lam_n) * (1 - p.delta) + lam_n / (1 - p.delta))
    C = tuple(sorted({(x0, x1, 0) for x0 in range(t) for x1 in (0, 1)} | {(0, 0, 1)}))
    b = max(math.exp(growth * (l1_norm(x) + 1)) for x in C)
    C_set = frozenset(C)
    return DriftSpec(
        V=lambda x: math.exp(growth * l1_norm(x)),
        alpha=1.0,
        beta=gamma,
        b=b,
        in_C=C_set.__contains__,
        C_states=C,
        label="m1-geometric",
        extras={"gamma": gamma, "contraction": 1 - gamma, "growth": growth},
    )


def m1_poly_drift_params(p: model_one.M1Params, t: int) -> DriftSpec:
    lam_n, _, _ = model_one.normalized_rates(p)
    beta = 1 - 2 * lam_n
    limit = 2 * p.lam / (p.theta1 + p.theta2 - p.lam)
    low = {x for x in m1_box(math.ceil(limit)) if x[0] < limit and x[1] + x[2] >= 1}
    C = tuple(sorted({(x0, x1, 0) for x0 in range(t) for x1 in (0, 1)} | low))
    b = max((l1_norm(x) + 1) ** 2 for x in C)
    C_set = frozenset(C)
    return DriftSpec(
        V=lambda x: float(l1_norm(x) ** 2),
        alpha=0.5,
        beta=beta,
        b=float(b),
        in_C=C_set.__contains__,
        C_states=C,
        label="m1-polynomial",
    )


# ---- model two -------------------------------------------------------------


def m2_box(radius: int) -> list[State]:
    return [(x1, x2) for x1 in range(radius + 1) for x2 in range(radius + 1)]


def _marginal_means(lam: float, theta: float, f, n_max: int) -> np.ndarray:
    """E[f(queue length at next arrival)] for n = 0..n_max jobs after routing."""
    out = np.zeros(n_max + 1)
    for n in range(n_max + 1):
        out[n] = sum(prob * f(k) for k, prob in model_two.departure_dist(lam, theta, n).items())
    return out


def m2_expected_next(p: model_two.M2Params, omega: float, f1, f2, radius: int):
    """E[f1(X1') + f2(X2')] under the weighted policy, using the product structure."""
    m1 = _marginal_means(p.lam, p.theta1, f1, radius + 1)
    m2 = _marginal_means(p.lam, p.theta2, f2, radius + 1)

    def expected(x: State) -> float:
        a = model_two.assign(omega, x)
        z1 = x[0] + (a == model_two.ONE)
        z2 = x[1] + (a == model_two.TWO)
        return float(m1[z1] + m2[z2])

    return expected


def m2_geom_constants(p: model_two.M2Params, omega: float) -> dict:
    lam, th1, th2, delta = p.lam, p.theta1, p.theta2, p.delta
    cr = p.c_R * p.R
    zeta4 = (1 - 0.5 * delta) / (1 - delta)
    a = min(
        omega * math.log(1 + delta),
        math.log(1 + delta),
        omega * math.log(zeta4),
        math.log(zeta4),
        delta * (1 - delta**2) / (4 * cr * (1 - 0.5 * delta)),
    )
    zeta1 = (lam / (th1 + lam)) / (1 - math.exp(-a / omega) * th1 / (th1 + lam))
    zeta2 = (lam / (th2 + lam)) / (1 - math.exp(-a) * th2 / (th2 + lam))
    w = omega / (1 + omega)
    gamma = 0.5 + 0.5 * max(
        zeta1,
        zeta2,
        zeta1 * w * math.exp(a / omega) + zeta2 / (1 + omega),
        zeta1 * w + zeta2 / (1 + omega) * math.exp(a),
    )
    head = (cr + 1) * math.exp(cr * a)

    def safe_log(num, den):
        if den <= 0 or num <= 0:
            return 0.0
        return math.log(num / den)

    x1g1 = omega / a * safe_log(head, (omega + 1) * gamma - omega * zeta1 * math.exp(a / omega) - zeta2)
    x2g1 = 1 / a * safe_log(
        head + omega * math.exp(a * (x1g1 + 1) / omega) * (zeta1 * math.exp(a / omega) - gamma),
        gamma - zeta2,
    )
    x2g2 = 1 / a * safe_log(head, (omega + 1) * gamma - omega * zeta1 - zeta2 * math.exp(a))
    x1g2 = omega / a * safe_log(
        head + math.exp(a * (x2g2 + 1)) * (zeta2 * math.exp(a) - gamma),
        omega * (gamma - zeta1),
    )
    return {
        "a": a,
        "zeta1": zeta1,
        "zeta2": zeta2,
        "gamma": gamma,
        "corners": ((x1g1, x2g1), (x1g2, x2g2)),
        "C_limits": (
            math.floor(max(x1g1, x1g2, 0.0)),
            math.floor(max(x2g1, x2g2, 0.0)),
        ),
    }


def m2_geom_drift_params(p: model_two.M2Params, omega: float) -> DriftSpec:
    k = m2_geom_constants(p, omega)
    a = k["a"]
    lim1, lim2 = k["C_limits"]
    b = 2 * omega / (omega + 1) * math.exp(a * (lim1 + 2) / omega) + 2 / (omega + 1) * math.exp(a * (lim2 + 2))
    return DriftSpec(
        V=lambda x: omega / (omega + 1) * math.exp(a * (x[0] + 1) / omega) + 1 / (omega + 1) * math.exp(a * (x[1] + 1)),
        alpha=1.0,
        beta=1 - k["gamma"],
        b=b,
        in_C=lambda x: x[0] <= lim1 and x[1] <= lim2,
        label="m2-geometric",
        extras=k,
    )


def m2_poly_constants(p: model_two.M2Params, omega: float) -> dict:
    lam, th1, th2 = p.lam, p.theta1, p.theta2
    root = math.sqrt(omega + 1)
    beta = min(
        th2 / (2 * (th2 + lam) * root),
        (th1 + th2 - lam) / ((th1 + th2 + lam) * root),
        th2 / (2 * (th2 + lam)),
        th1 / (2 * (th1 + lam) * math.sqrt(omega)),
    )
    cr, R = p.c_R, p.R
    limits = tuple(
        math.floor((16 * cr**2 * R ** (3 - i) + 101 * cr * R) * (lam + th) / th)
        for i, th in ((1, th1), (2, th2))
    )
    return {"beta": beta, "C_limits": limits}


def m2_poly_drift_params(p: model_two.M2Params, omega: float) -> DriftSpec:
    k = m2_poly_constants(p, omega)
    lim1, lim2 = k["C_limits"]
    beta = k["beta"]
    b = (beta + 1) * ((lim1 + 1) ** 2 / omega + (lim2 + 1) ** 2)
    return DriftSpec(
        V=lambda x: x[0] ** 2 / omega + x[1] ** 2,
        alpha=0.5,
        beta=beta,
        b=b,
        in_C=lambda x: x[0] <= lim1 and x[1] <= lim2,
        label="m2-polynomial",
        extras=k,
    )


def m2_drift_expectation(p: model_two.M2Params, omega: float, spec: DriftSpec, radius: int):
    if spec.label == "m2-geometric":
        a = spec.extras["a"]
        f1 = lambda k: omega / (omega + 1) * math.exp(a * (k + 1) / omega)
        f2 = lambda k: 1 / (omega + 1) * math.exp(a * (k + 1))
    else:
        f1 = lambda k: k**2 / omega
        f2 = lambda k: float(k**2)
    return m2_expected_next(p, omega, f1, f2, radius)


# ---- hitting-time bounds -----------------------------------------------------


@dataclass(frozen=True)
class PolyBoundParams:
    beta_p: float
    b_p: float
    alpha_p: float
    log_alpha_C: float  # log of 1 / min_C K
    r: int = 1

    @property
    def alpha_C(self) -> float:
        return math.exp(self.log_alpha_C) if self.log_alpha_C < 700 else math.inf


def _log_add(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def log_poly_moment_bound(i: int, V_at_x: float, params: PolyBoundParams) -> float:
    """Natural log of i * phi(i) * (V(x) + b alpha_C)."""
    if not 1 <= i <= params.r + 1:
        raise ValueError("moment order must lie in 1..r+1")
    beta, b, alpha = params.beta_p, params.b_p, params.alpha_p
    log_aC = params.log_alpha_C
    log_phi = 0.0
    beta_tilde = min(beta, 1.0)
    for j in range(1, i + 1):
        eta = 1 - (j - 1) * (1 - alpha)
        if eta < 1:
            beta_eta = eta * beta_tilde
            b_eta = b**eta + eta * beta_tilde * max(1.0, beta_tilde ** ((alpha + eta - 1) / (1 - alpha)))
        else:
            beta_eta, b_eta = beta, b
        term = math.log(2 ** (j - 1))
        if j > 1:
            term = _log_add(term, math.log(j - 1) + log_aC + math.log(b_eta))
        log_phi += term - math.log(beta_eta)
    tail = math.log(b) + log_aC if b > 0 else -math.inf
    head = math.log(V_at_x) if V_at_x > 0 else -math.inf
    return math.log(i) + log_phi + _log_add(head, tail)


def poly_moment_bound(i: int, V_at_x: float, params: PolyBoundParams) -> float:
    log_bound = log_poly_moment_bound(i, V_at_x, params)
    return math.exp(log_bound) if log_bound < 709 else math.inf


@dataclass(frozen=True)
class GeomBoundParams:
    gamma_g: float  # contraction: P V <= gamma V off C
    b_g: float
    C_size: int
    max_E_tau: float

    @property
    def b_tilde(self) -> float:
        return (3 * self.b_g + 1) / (1 - self.gamma_g) * (self.C_size**2 * self.max_E_tau)

    @property
    def gamma_tilde(self) -> float:
        return 1 - 1 / self.b_tilde

    @property
    def c(self) -> float:
        bt = self.b_tilde
        return self.b_g * bt**2 / (bt - 1)


def geom_tail_bound(n: int, params: GeomBoundParams) -> float:
    """Upper bound on P_0(return time to zero > n)."""
    if params.b_tilde <= 1:
        raise ValueError("bound needs b_tilde > 1")
    return params.c * params.gamma_tilde**n


def resolvent_weight(kernel: Callable[[State], TransitionDistribution], y: State, n_max: int = 64) -> float:
    """sum_{n=0}^{n_max} 2^{-n-2} P^n(y, 0) by exact propagation of the law of X_n."""
    zero = tuple(0 for _ in y)
    dist = {tuple(y): 1.0}
    total = 0.0
    for n in range(n_max + 1):
        total += 2.0 ** (-n - 2) * dist.get(zero, 0.0)
        if n == n_max:
            break
        nxt: dict[State, float] = {}
        for x, px in dist.items():
            tr = kernel(x)
            for s, ps in zip(tr.states, tr.probs):
                nxt[s] = nxt.get(s, 0.0) + px * ps
        dist = nxt
    return total


def m1_poly_bound_params(p: model_one.M1Params, t: int, n_max: int = 64) -> PolyBoundParams:
    spec = m1_poly_drift_params(p, t)
    chain = m1_chain(p, t)
    k_min = min(resolvent_weight(chain, y, n_max) for y in spec.C_states)
    return PolyBoundParams(spec.beta, spec.b, spec.alpha, -math.log(k_min))


def m2_log_empty_prob(p: model_two.M2Params, omega: float, x: State) -> float:
    """log P(x, 0) in one step under the weighted policy."""
    a = model_two.assign(omega, x)
    z1 = x[0] + (a == model_two.ONE)
    z2 = x[1] + (a == model_two.TWO)
    return z1 * math.log(p.theta1 / (p.theta1 + p.lam)) + z2 * math.log(p.theta2 / (p.theta2 + p.lam))


def m2_poly_bound_params(p: model_two.M2Params, omega: float) -> PolyBoundParams:
    """Uses K(y) >= 2^{-3} P(y, 0); one-step emptying is least likely at the far corner of C."""
    spec = m2_poly_drift_params(p, omega)
    lim1, lim2 = spec.extras["C_limits"]
    log_k_min = math.log(2.0**-3) + m2_log_empty_prob(p, omega, (lim1, lim2))
    return PolyBoundParams(spec.beta, spec.b, spec.alpha, -log_k_min)


# ---- Monte-Carlo hitting statistics -----------------------------------------


@dataclass
class HittingStats:
    samples: np.ndarray
    moments: dict  # i -> (mean, stderr)
    tails: np.ndarray  # tails[n-1] = P(tau > n)
    tail_stderr: np.ndarray
    block_max_means: dict  # block size -> mean of block maxima


def hitting_samples(env, policy, x0: State, n_samples: int, rng, step_cap: int = DEFAULT_STEP_CAP) -> np.ndarray:
    """Hitting times of zero from x0 (the return time when x0 is itself zero)."""
    x0 = tuple(x0)
    out = np.empty(n_samples, dtype=np.int64)
    for s in range(n_samples):
        if l1_norm(x0) == 0:
            out[s] = return_time(env, policy, x0, rng, step_cap)
        else:
            out[s] = run_until_zero(env, policy, x0, rng, step_cap)[0]
    return out


def summarize_hitting(samples: np.ndarray, tail_max: int = 50, block_sizes=(100, 1_000, 10_000)) -> HittingStats:
    n = len(samples)
    x = samples.astype(float)
    moments = {}
    for i in (1, 2):
        vals = x**i
        moments[i] = (float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0)
    tails = np.array([(samples > k).mean() for k in range(1, tail_max + 1)])
    tail_se = np.sqrt(tails * (1 - tails) / n)
    blocks = {}
    for size in block_sizes:
        m = n // size
        if m >= 1:
            blocks[size] = float(samples[: m * size].reshape(m, size).max(axis=1).mean())
    return HittingStats(samples, moments, tails, tail_se, blocks)


def empirical_hitting_stats(env, policy, x0: State, n_samples: int, rng, tail_max: int = 50) -> HittingStats:
    return summarize_hitting(hitting_samples(env, policy, x0, n_samples, rng), tail_max)


def block_max_growth_ok(block_means: dict, factor: float = 2.5) -> bool:
    """Successive block-max means grow at most ``factor`` times the ratio of log block sizes."""
    sizes = sorted(block_means)
    for small, big in zip(sizes, sizes[1:]):
        if block_means[big] / block_means[small] > factor * math.log(big) / math.log(small):
            return False
    return True


def upper_mean(samples: np.ndarray, z: float = 2.326) -> float:
    """One-sided 99% upper confidence bound on the mean."""
    n = len(samples)
    return float(samples.mean() + z * samples.std(ddof=1) / math.sqrt(n))


def m1_geom_bound_params(
    p: model_one.M1Params, t: int, rng, samples_per_state: int = 2_000, analytic: bool = True
) -> tuple[GeomBoundParams, dict]:
    """Tail-bound constants; max E_u[tau] over C minus zero by Monte-Carlo UCB or the moment bound."""
    spec = m1_geom_drift_params(p, t)
    env = model_one.Model1Env(p)
    policy = model_one.ThresholdPolicy(t)
    starts = [u for u in spec.C_states if l1_norm(u) > 0]
    empirical = max(upper_mean(hitting_samples(env, policy, u, samples_per_state, rng)) for u in starts)
    routes = {"empirical": empirical}
    if analytic:
        poly = m1_poly_bound_params(p, t)
        routes["analytic"] = max(poly_moment_bound(1, l1_norm(u) ** 2, poly) for u in starts)
    max_e = min(routes.values())
    params = GeomBoundParams(gamma_g=spec.extras["contraction"], b_g=spec.b, C_size=len(spec.C_states), max_E_tau=max_e)
    return params, routes


def drift_cases_m1(thetas: Sequence, lam: float, thresholds: Sequence[int], radius: int = 60):
    """Yield (theta, t, spec, violating states) over the grid for both Lyapunov functions."""
    for th, t in itertools.product(thetas, thresholds):
        p = model_one.M1Params(lam, *th)
        chain = m1_chain(p, t)
        box = m1_box(radius, t)
        for spec in (m1_geom_drift_params(p, t), m1_poly_drift_params(p, t)):
            yield th, t, spec, drift_records(kernel_expectation(chain, spec.V), spec, box)


def drift_cases_m2(thetas: Sequence, lam: float, omegas: Sequence[float], radius: int = 60):
    for th, w in itertools.product(thetas, omegas):
        p = model_two.M2Params(lam, *th)
        box = m2_box(radius)
        for spec in (m2_geom_drift_params(p, w), m2_poly_drift_params(p, w)):
            yield th, w, spec, drift_records(m2_drift_expectation(p, w, spec, radius), spec, box)
