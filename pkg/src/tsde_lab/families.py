"""A model family bundles a parameter grid with its oracle table, likelihoods and environments."""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np

from . import model_one, model_two
from .grids import model_one_grid, model_two_grid
from .mdp import Policy


def _model_one_env(lam: float, theta):
    return model_one.Model1Env(model_one.M1Params(lam, *theta))


def _model_two_env(lam: float, theta):
    return model_two.Model2Env(model_two.M2Params(lam, *theta))


@dataclass
class ModelFamily:
    name: str
    lam: float
    thetas: list[tuple[float, float]]
    policies: list[Policy]
    costs: np.ndarray
    loglik: Callable
    n_actions: int
    dim: int
    make_env: Callable

    def env(self, index: int):
        return self.make_env(self.thetas[index])

    def policy_param(self, index: int) -> float:
        pol = self.policies[index]
        return float(pol.t) if hasattr(pol, "t") else float(pol.omega)


def model_one_family(
    lam: float, thetas: Sequence[tuple[float, float]] | None = None, table: dict | None = None
) -> ModelFamily:
    """``table`` may map theta -> (threshold, cost) to skip the stationary solves."""
    thetas = list(thetas) if thetas is not None else model_one_grid(lam)
    policies, costs = [], []
    for th in thetas:
        if table is not None and tuple(th) in table:
            t_star, cost = table[tuple(th)]
            pol = model_one.ThresholdPolicy(int(t_star))
        else:
            pol, cost = model_one.policy_oracle(model_one.M1Params(lam, *th))
        policies.append(pol)
        costs.append(cost)
    return ModelFamily(
        name="one",
        lam=lam,
        thetas=thetas,
        policies=policies,
        costs=np.array(costs),
        loglik=model_one.M1LikelihoodTable(lam, thetas),
        n_actions=model_one.N_ACTIONS,
        dim=model_one.DIM,
        make_env=partial(_model_one_env, lam),
    )


def model_two_family(
    lam: float,
    thetas: Sequence[tuple[float, float]] | None = None,
    omega_grid: Sequence[float] = model_two.OMEGA_GRID,
    mc: model_two.MCConfig = model_two.MCConfig(),
    table: dict | None = None,
) -> ModelFamily:
    """``table`` may map theta -> (omega, cost) to skip the Monte-Carlo oracle."""
    thetas = list(thetas) if thetas is not None else model_two_grid(lam)
    policies, costs = [], []
    for th in thetas:
        if table is not None and tuple(th) in table:
            omega, cost = table[tuple(th)]
            pol = model_two.WeightedPolicy(omega)
        else:
            pol, cost = model_two.policy_oracle(model_two.M2Params(lam, *th), omega_grid, mc)
        policies.append(pol)
        costs.append(cost)
    return ModelFamily(
        name="two",
        lam=lam,
        thetas=thetas,
        policies=policies,
        costs=np.array(costs),
        loglik=model_two.M2LikelihoodTable(lam, thetas),
        n_actions=model_two.N_ACTIONS,
        dim=model_two.DIM,
        make_env=partial(_model_two_env, lam),
    )


def build_family(model: str, lam: float, table: dict | None = None, **kwargs) -> ModelFamily:
    if model == "one":
        return model_one_family(lam, table=table, **kwargs)
    if model == "two":
        return model_two_family(lam, table=table, **kwargs)
    raise ValueError(f"unknown model {model!r}")
