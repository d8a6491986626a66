"""Experiment orchestration: configs, seeding, replication fan-out, aggregation and CSV output."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import __version__, model_two
from .baselines import run_agrawal_teneketzis, run_rbmle
from .bayes import PosteriorGrid, sample_index
from .families import ModelFamily, build_family
from .grids import model_two_grid, table_order
from .model_one import ThresholdPolicy
from .model_two import WeightedPolicy
from .tsde import HORIZON, RunTrace, compute_regret, episode_bound_audit, episode_bounds, run_tsde

REFERENCE_LAMBDAS = (0.3, 0.5, 0.7)
AXIS_NOTE = "t counts every sampled transition, dummy uniformization events included"

REGRET_HEADER = ("t", "mean", "std", "reps")
TV_HEADER = ("t", "mean_tv")
EPISODE_HEADER = ("rep", "k", "t_k", "t_tilde", "t_next", "theta_index", "stop_reason")
RUNS_HEADER = (
    "rep", "algorithm", "theta_index", "theta1", "theta2", "J_star", "final_regret",
    "T", "K_T", "K_M", "M_T", "n_actions", "dim", "K_T_bound", "K_M_bound", "audit_pass",
)
TABLE_HEADER = ("theta1", "theta2", "omega_star", "J_hat", "stderr")
ORACLE_HEADER = ("theta1", "theta2", "policy_param", "J")


class MCSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    horizon: int = Field(model_two.MC_HORIZON, gt=0)
    burn_in: int = Field(model_two.MC_BURN_IN, ge=0)
    reps: int = Field(model_two.MC_REPS, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _window(self):
        if self.horizon <= self.burn_in:
            raise ValueError("mc.horizon must exceed mc.burn_in")
        return self

    def as_mc(self) -> model_two.MCConfig:
        return model_two.MCConfig(self.horizon, self.burn_in, self.reps, self.seed)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: Literal["one", "two"]
    lam: float = Field(0.5, gt=0)
    algorithm: Literal["tsde", "rbmle", "at"] = "tsde"
    alpha: float = Field(0.5, gt=0)
    at_delta: Optional[float] = Field(None, gt=0)
    horizon: int = Field(5000, ge=2)
    reps: int = Field(200, ge=1)
    seed: int = Field(0, ge=0)
    prior: Literal["uniform"] | list[float] = "uniform"
    theta_star: Optional[tuple[float, float]] = None
    omega_grid: list[float] = Field(default_factory=lambda: list(model_two.OMEGA_GRID))
    mc: MCSettings = MCSettings()
    oracle_table: Optional[str] = None
    reference_rates: bool = False
    write_costs: bool = False
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _checks(self):
        if self.reference_rates and self.lam not in REFERENCE_LAMBDAS:
            raise ValueError(f"reference-rate runs need lam in {REFERENCE_LAMBDAS}")
        if not self.omega_grid:
            raise ValueError("omega_grid must be nonempty")
        return self

    @property
    def schedule_delta(self) -> float:
        if self.at_delta is not None:
            return self.at_delta
        return 3.5 if self.model == "one" else 3.0

    def config_hash(self) -> str:
        # execution details that cannot change results stay out of the hash
        payload = self.model_dump(mode="json", exclude={"workers", "oracle_table"})
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _desk(model: str, lam: float, algorithm: str = "tsde", **extra) -> dict:
    return dict(model=model, lam=lam, algorithm=algorithm, reps=200, horizon=5000, reference_rates=True, **extra)


PRESETS: dict[str, dict[str, dict]] = {
    "arrival-sweep-model1-desk": {f"lam{lam}": _desk("one", lam) for lam in REFERENCE_LAMBDAS},
    "arrival-sweep-model2-desk": {f"lam{lam}": _desk("two", lam) for lam in REFERENCE_LAMBDAS},
    "baselines-model1-desk": {alg: _desk("one", 0.5, alg) for alg in ("tsde", "rbmle", "at")},
    "baselines-model2-desk": {alg: _desk("two", 0.5, alg) for alg in ("tsde", "rbmle", "at")},
    "smoke": {
        "model1": dict(model="one", lam=0.5, reps=2, horizon=200),
        "model2": dict(
            model="two", lam=0.5, reps=2, horizon=200, mc=dict(horizon=4000, burn_in=400, reps=2)
        ),
    },
}


def preset_configs(name: str) -> dict[str, ExperimentConfig]:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return {key: ExperimentConfig(**cfg) for key, cfg in PRESETS[name].items()}


# ---- seeding and single replications ---------------------------------------------


def replication_seed(base_seed: int, rep: int) -> np.random.SeedSequence:
    """Stream for replication ``rep``; the same as SeedSequence(base_seed).spawn(...)[rep]."""
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(rep,))


def make_prior(config: ExperimentConfig, family: ModelFamily) -> PosteriorGrid:
    if config.prior == "uniform":
        return PosteriorGrid.uniform(family.thetas)
    return PosteriorGrid.weighted(family.thetas, config.prior)


def draw_truth(config: ExperimentConfig, family: ModelFamily, prior: PosteriorGrid, rep: int):
    theta_ss, run_ss = replication_seed(config.seed, rep).spawn(2)
    if config.theta_star is not None:
        index = family.thetas.index(tuple(config.theta_star))
    else:
        index = sample_index(prior, np.random.default_rng(theta_ss))
    return index, run_ss


def run_replication(config: ExperimentConfig, family: ModelFamily, rep: int) -> RunTrace:
    prior = make_prior(config, family)
    index, run_ss = draw_truth(config, family, prior, rep)
    env = family.env(index)
    if config.algorithm == "tsde":
        return run_tsde(env, prior, family.policies, family.loglik, config.horizon, run_ss, index)
    if config.algorithm == "rbmle":
        return run_rbmle(
            env, prior, family.policies, family.costs, family.loglik, config.alpha, config.horizon, run_ss, index
        )
    policy_set = candidate_policies(family, config.omega_grid)
    trace = run_agrawal_teneketzis(env, policy_set, config.horizon, config.schedule_delta, run_ss)
    trace.theta_star_index = index
    return trace


def candidate_policies(family: ModelFamily, omega_grid: Sequence[float] = model_two.OMEGA_GRID) -> list:
    """Policy class explored by the forced-exploration baseline."""
    if family.name == "one":
        cap = math.ceil(math.sqrt(2) * 3.8) + 1
        return [ThresholdPolicy(t) for t in range(1, cap + 1)]
    return [WeightedPolicy(w) for w in omega_grid]


@dataclass
class RepResult:
    rep: int
    theta_index: int
    regret: np.ndarray
    tv: np.ndarray
    trace: RunTrace


_WORKER_STATE: dict = {}


def _init_worker(config_json: str, family: ModelFamily):
    _WORKER_STATE["config"] = ExperimentConfig.model_validate_json(config_json)
    _WORKER_STATE["family"] = family


def _worker_rep(rep: int) -> RepResult:
    return _one_rep(_WORKER_STATE["config"], _WORKER_STATE["family"], rep)


def _one_rep(config: ExperimentConfig, family: ModelFamily, rep: int) -> RepResult:
    trace = run_replication(config, family, rep)
    J = family.costs[trace.theta_star_index]
    return RepResult(rep, trace.theta_star_index, compute_regret(trace, J), trace.tv, trace)


def run_replications(config: ExperimentConfig, family: ModelFamily) -> list[RepResult]:
    reps = range(config.reps)
    if config.workers == 1:
        return [_one_rep(config, family, r) for r in reps]
    with ProcessPoolExecutor(
        max_workers=config.workers, initializer=_init_worker, initargs=(config.model_dump_json(), family)
    ) as pool:
        results = list(pool.map(_worker_rep, reps, chunksize=max(1, config.reps // (4 * config.workers))))
    return sorted(results, key=lambda r: r.rep)


# ---- aggregation -----------------------------------------------------------------


@dataclass
class AggregateCurve:
    t: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    reps: int


def aggregate(curves: np.ndarray) -> AggregateCurve:
    curves = np.atleast_2d(curves)
    n, T = curves.shape
    std = curves.std(axis=0, ddof=1) if n > 1 else np.zeros(T)
    return AggregateCurve(np.arange(1, T + 1), curves.mean(axis=0), std, n)


class NonpositiveRegretWindow(ValueError):
    pass


@dataclass(frozen=True)
class GrowthFit:
    exponent: float
    ci_low: float
    ci_high: float
    n_points: int


def _power_slope(t: np.ndarray, values: np.ndarray) -> tuple[float, int]:
    keep = values > 0
    if keep.sum() < 2:
        raise NonpositiveRegretWindow("regret is not positive on the fit window")
    slope = np.polyfit(np.log(t[keep]), np.log(values[keep]), 1)[0]
    return float(slope), int(keep.sum())


def fit_growth_exponent(
    curves, lo_frac: float = 0.1, n_points: int = 64, n_boot: int = 500, seed: int = 0
) -> GrowthFit:
    """Log-log slope of mean regret on [T lo_frac, T], with a bootstrap CI over replications."""
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    n, T = curves.shape
    grid = np.unique(np.geomspace(max(1, math.ceil(T * lo_frac)), T, n_points).round().astype(int))
    t = grid.astype(float)
    slope, used = _power_slope(t, curves[:, grid - 1].mean(axis=0))
    if n == 1:
        return GrowthFit(slope, slope, slope, used)
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        pick = rng.integers(0, n, n)
        try:
            boots.append(_power_slope(t, curves[pick][:, grid - 1].mean(axis=0))[0])
        except NonpositiveRegretWindow:
            continue
    if not boots:
        return GrowthFit(slope, math.nan, math.nan, used)
    lo, hi = np.percentile(boots, [2.5, 97.5])
    return GrowthFit(slope, float(lo), float(hi), used)


# ---- file output ---------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, payload: dict) -> None:
    files = sorted(p.name for p in out.iterdir() if p.suffix == ".csv")
    payload = dict(payload, package_version=__version__, files={f: sha256_file(out / f) for f in files})
    (out / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_oracle_csv(path: Path, family: ModelFamily) -> None:
    rows = [(th[0], th[1], family.policy_param(i), family.costs[i]) for i, th in enumerate(family.thetas)]
    write_csv(path, ORACLE_HEADER, rows)


def load_oracle_table(path) -> dict:
    table = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            table[(float(row["theta1"]), float(row["theta2"]))] = (float(row["policy_param"]), float(row["J"]))
    return table


def family_for(config: ExperimentConfig) -> ModelFamily:
    table = load_oracle_table(config.oracle_table) if config.oracle_table else None
    if config.model == "two":
        return build_family("two", config.lam, table=table, omega_grid=config.omega_grid, mc=config.mc.as_mc())
    return build_family("one", config.lam, table=table)


@dataclass
class ExperimentResult:
    out: Path
    regret: AggregateCurve
    tv: AggregateCurve
    curves: np.ndarray
    results: list[RepResult]
    growth: GrowthFit | None
    audits_passed: bool


def run_experiment(config: ExperimentConfig, out, family: ModelFamily | None = None) -> ExperimentResult:
    """Run every replication, then write regret/tv/episodes/runs CSVs and a manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    family = family if family is not None else family_for(config)
    results = run_replications(config, family)
    curves = np.array([r.regret for r in results])
    regret = aggregate(curves)
    tv = aggregate(np.array([r.tv for r in results]))

    write_csv(out / "regret.csv", REGRET_HEADER, zip(regret.t, regret.mean, regret.std, [regret.reps] * len(regret.t)))
    write_csv(out / "tv.csv", TV_HEADER, zip(tv.t, tv.mean))
    write_csv(
        out / "episodes.csv",
        EPISODE_HEADER,
        (
            (r.rep, ep.k, ep.t_k, ep.t_tilde, ep.t_next, ep.theta_index, ep.stop_reason)
            for r in results
            for ep in r.trace.episodes
        ),
    )
    audits_passed = True
    run_rows = []
    for r in results:
        tr = r.trace
        th = family.thetas[r.theta_index]
        if tr.algorithm == "tsde":
            audit = episode_bound_audit(tr, family.n_actions, family.dim)
            audits_passed &= audit.passed
            kt_bound, km_bound, ok = audit.K_T_bound, audit.K_M_bound, audit.passed
        else:
            km_bound, kt_bound = episode_bounds(tr.T, tr.M_T, family.n_actions, family.dim)
            ok = True
        run_rows.append(
            (r.rep, tr.algorithm, r.theta_index, th[0], th[1], family.costs[r.theta_index], r.regret[-1],
             tr.T, tr.K_T, tr.K_M, tr.M_T, family.n_actions, family.dim, kt_bound, km_bound, ok)
        )
    write_csv(out / "runs.csv", RUNS_HEADER, run_rows)
    write_oracle_csv(out / "oracle.csv", family)
    if config.write_costs:
        write_csv(
            out / "costs.csv",
            ("rep", "t", "cost"),
            ((r.rep, t + 1, c) for r in results for t, c in enumerate(r.trace.costs)),
        )
    try:
        growth = fit_growth_exponent(curves, seed=config.seed)
    except NonpositiveRegretWindow:
        growth = None
    write_manifest(
        out,
        {
            "config": config.model_dump(mode="json"),
            "config_hash": config.config_hash(),
            "replication_seeds": {"entropy": config.seed, "spawn_key": "(rep,)", "reps": config.reps},
            "axis": AXIS_NOTE,
            "growth_exponent": None if growth is None else growth.__dict__,
            "final_mean_regret": float(regret.mean[-1]),
            "final_mean_tv": float(tv.mean[-1]),
            "audits_passed": bool(audits_passed),
        },
    )
    return ExperimentResult(out, regret, tv, curves, results, growth, audits_passed)


# ---- tables and audits ---------------------------------------------------------------


def estimate_cost_table(
    lam: float = 0.5, omega_grid: Sequence[float] = model_two.OMEGA_GRID, mc: MCSettings = MCSettings(), thetas=None
) -> list[tuple]:
    """Best weight and its cost for every grid point, in table order."""
    rows = []
    for th in table_order(list(thetas) if thetas is not None else model_two_grid(lam)):
        omega, cost, err = model_two.best_weight(model_two.M2Params(lam, *th), omega_grid, mc.as_mc())
        rows.append((th[0], th[1], omega, cost, err))
    return rows


def audit_directory(path) -> tuple[bool, list[str]]:
    """Re-check the episode-count bounds from stored runs.csv / episodes.csv files."""
    path = Path(path)
    messages = []
    ok = True
    runs_files = sorted(path.rglob("runs.csv"))
    if not runs_files:
        raise FileNotFoundError(f"no runs.csv under {path}")
    for runs_csv in runs_files:
        episodes: dict[int, list[dict]] = {}
        with open(runs_csv.parent / "episodes.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                episodes.setdefault(int(row["rep"]), []).append(row)
        with open(runs_csv, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["algorithm"] != "tsde":
                    continue
                rep, T = int(row["rep"]), int(row["T"])
                eps = episodes.get(rep, [])
                k_t = sum(1 for e in eps if int(e["t_k"]) <= T)
                k_m = int(row["K_M"])
                km_bound, kt_bound = episode_bounds(T, int(row["M_T"]), int(row["n_actions"]), int(row["dim"]))
                passed = k_t <= kt_bound and k_m <= km_bound and k_t == int(row["K_T"])
                if not passed:
                    ok = False
                    messages.append(f"{runs_csv.parent.name} rep {rep}: K_T={k_t}/{kt_bound:.1f} K_M={k_m}/{km_bound:.1f}")
    return ok, messages


def horizon_clipped(trace: RunTrace) -> bool:
    return bool(trace.episodes) and trace.episodes[-1].stop_reason == HORIZON
