"""Drift sweeps and hitting-time bound comparisons with CSV reports."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import diagnostics as dg
from . import model_one, model_two
from .grids import model_one_grid, model_two_grid
from .harness import write_csv

DRIFT_HEADER = ("model", "theta1", "theta2", "policy_param", "state", "lhs", "rhs", "pass")
HITTING_HEADER = ("model", "theta1", "theta2", "policy_param", "x0", "order", "empirical", "stderr", "log_bound", "pass")
TAIL_HEADER = ("n", "empirical", "stderr", "bound", "pass")


class DriftConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    models: list[Literal["one", "two"]] = ["one", "two"]
    lam: float = Field(0.5, gt=0)
    radius: int = Field(60, ge=1)
    thresholds: list[int] = list(range(1, 8))
    omega_grid: list[float] = list(model_two.OMEGA_GRID)
    rows: Literal["all", "worst", "violations"] = "worst"


@dataclass
class DriftSummary:
    cases: int
    violations: int
    exceptional: dict  # label -> number of states needing the b term, summed over cases


def _state_str(x) -> str:
    return "(" + ",".join(str(v) for v in x) + ")"


def run_drift(config: DriftConfig, out) -> DriftSummary:
    """Check all four drift inequalities over the grids; one CSV row per (case, state) selection."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    cases = violations = 0
    exceptional: dict[str, int] = {}
    sweeps = []
    if "one" in config.models:
        sweeps.append(("one", dg.drift_cases_m1(model_one_grid(config.lam), config.lam, config.thresholds, config.radius)))
    if "two" in config.models:
        sweeps.append(("two", dg.drift_cases_m2(model_two_grid(config.lam), config.lam, config.omega_grid, config.radius)))
    for model, sweep in sweeps:
        for th, param, spec, records in sweep:
            cases += 1
            bad = [r for r in records if not r.passed]
            violations += len(bad)
            kind = spec.label.split("-")[1]
            tag = f"{model}/{kind}"
            need_b = sum(1 for r in records if r.lhs > r.rhs - (spec.b if spec.in_C(r.state) else 0.0) + dg.DRIFT_TOL)
            exceptional[tag] = exceptional.get(tag, 0) + need_b
            if config.rows == "all":
                chosen = records
            elif config.rows == "violations":
                chosen = bad
            else:
                chosen = [max(records, key=lambda r: r.lhs - r.rhs)]
            rows.extend((tag, th[0], th[1], float(param), _state_str(r.state), r.lhs, r.rhs, r.passed) for r in chosen)
    write_csv(out / "drift.csv", DRIFT_HEADER, rows)
    return DriftSummary(cases, violations, exceptional)


class HittingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples: int = Field(100_000, ge=10)
    seed: int = 0
    tail_max: int = Field(50, ge=1)
    lam: float = 0.5
    theta: tuple[float, float] = (1.0, 0.5)
    samples_per_state: int = Field(2_000, ge=10)


@dataclass
class HittingReport:
    tail_rows: list
    moment_rows: list
    block_growth_ok: bool

    @property
    def passed(self) -> bool:
        return all(r[-1] for r in self.tail_rows) and all(r[-1] for r in self.moment_rows)


def run_hitting(config: HittingConfig, out=None) -> HittingReport:
    """Compare Monte-Carlo hitting times with the closed-form bounds on the designated cases."""
    ss = np.random.SeedSequence(config.seed)
    tail_ss, geo_ss, *moment_ss = ss.spawn(6)
    p1 = model_one.M1Params(config.lam, *config.theta)
    pol1, _ = model_one.policy_oracle(p1)
    env1 = model_one.Model1Env(p1)

    returns = dg.hitting_samples(env1, pol1, (0, 0, 0), config.samples, np.random.default_rng(tail_ss))
    stats = dg.summarize_hitting(returns, config.tail_max)
    geo, _routes = dg.m1_geom_bound_params(p1, pol1.t, np.random.default_rng(geo_ss), config.samples_per_state)
    tail_rows = []
    for n in range(1, config.tail_max + 1):
        bound = dg.geom_tail_bound(n, geo)
        emp, se = stats.tails[n - 1], stats.tail_stderr[n - 1]
        tail_rows.append((n, emp, se, bound, bool(emp <= bound + 3 * se)))

    p2 = model_two.M2Params(config.lam, *config.theta)
    pol2, _ = model_two.policy_oracle(p2)
    env2 = model_two.Model2Env(p2)
    cases = [
        ("one", env1, pol1, float(pol1.t), x0, dg.m1_poly_bound_params(p1, pol1.t), lambda x: float(sum(x) ** 2))
        for x0 in ((1, 1, 0), (5, 1, 1))
    ] + [
        ("two", env2, pol2, pol2.omega, x0, dg.m2_poly_bound_params(p2, pol2.omega),
         lambda x, w=pol2.omega: x[0] ** 2 / w + x[1] ** 2)
        for x0 in ((1, 0), (5, 5))
    ]
    moment_rows = []
    for (model, env, pol, param, x0, params, V), seq in zip(cases, moment_ss):
        taus = dg.hitting_samples(env, pol, x0, config.samples, np.random.default_rng(seq))
        st = dg.summarize_hitting(taus, config.tail_max)
        for order in (1, 2):
            mean, se = st.moments[order]
            log_bound = dg.log_poly_moment_bound(order, V(x0), params)
            ok = math.log(mean + 3 * se) <= log_bound
            moment_rows.append((model, config.theta[0], config.theta[1], param, _state_str(x0), order, mean, se, log_bound, ok))
    report = HittingReport(tail_rows, moment_rows, dg.block_max_growth_ok(stats.block_max_means))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "tails.csv", TAIL_HEADER, tail_rows)
        write_csv(out / "hitting.csv", HITTING_HEADER, moment_rows)
    return report
