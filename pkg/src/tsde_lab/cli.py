"""Command-line entry point: run, table, drift, hitting, audit, oracle."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml
from pydantic import ValidationError

from . import harness
from .checks import DriftConfig, HittingConfig, run_drift, run_hitting

EXIT_OK, EXIT_INVALID, EXIT_AUDIT = 0, 2, 3


class UsageError(Exception):
    pass


def _load_yaml(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError("config file must hold a mapping")
    return data


def _overrides(args, keys=("seed", "reps", "horizon")) -> dict:
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _experiment_configs(args) -> dict[str, harness.ExperimentConfig]:
    if args.preset and args.config:
        raise UsageError("give either --preset or --config, not both")
    if args.preset:
        raw = {k: c.model_dump() for k, c in harness.preset_configs(args.preset).items()}
    elif args.config:
        data = _load_yaml(args.config)
        raw = data["runs"] if "runs" in data else {"": data}
        if not isinstance(raw, dict):
            raise UsageError("'runs' must map run names to configs")
    else:
        raise UsageError("run needs --preset or --config")
    return {name: harness.ExperimentConfig(**{**cfg, **_overrides(args)}) for name, cfg in raw.items()}


def cmd_run(args) -> int:
    configs = _experiment_configs(args)
    root = Path(args.out or f"runs/{args.preset or Path(args.config).stem}")
    ok = True
    for name, cfg in configs.items():
        res = harness.run_experiment(cfg, root / name if name else root)
        g = res.growth
        growth = "n/a" if g is None else f"{g.exponent:.3f} [{g.ci_low:.3f}, {g.ci_high:.3f}]"
        print(
            f"{name or cfg.model}: final mean regret {res.regret.mean[-1]:.3f} "
            f"(std {res.regret.std[-1]:.3f}, reps {res.regret.reps}), growth {growth}, "
            f"final tv {res.tv.mean[-1]:.3f}, audits {'pass' if res.audits_passed else 'FAIL'}"
        )
        ok &= res.audits_passed
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_table(args) -> int:
    data = _load_yaml(args.config)
    mc = dict(data.get("mc", {}))
    if args.seed is not None:
        mc["seed"] = args.seed
    if args.reps is not None:
        mc["reps"] = args.reps
    if args.horizon is not None:
        mc["horizon"] = args.horizon
    settings = harness.MCSettings(**mc)
    lam = float(data.get("lam", 0.5))
    grid = data.get("omega_grid", list(harness.model_two.OMEGA_GRID))
    rows = harness.estimate_cost_table(lam, grid, settings)
    out = Path(args.out or "runs/table")
    out.mkdir(parents=True, exist_ok=True)
    harness.write_csv(out / "table.csv", harness.TABLE_HEADER, rows)
    for th1, th2, w, J, se in rows:
        print(f"{th1:.1f} {th2:.1f}  omega*={w:g}  J={J:.3f} +- {se:.3f}")
    return EXIT_OK


def cmd_drift(args) -> int:
    cfg = DriftConfig(**_load_yaml(args.config))
    summary = run_drift(cfg, Path(args.out or "runs/drift"))
    print(f"{summary.cases} cases, {summary.violations} violating states")
    for tag, n in sorted(summary.exceptional.items()):
        print(f"  {tag}: {n} state checks rely on the excursion term")
    return EXIT_OK if summary.violations == 0 else EXIT_AUDIT


def cmd_hitting(args) -> int:
    data = _load_yaml(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.reps is not None:
        data["samples"] = args.reps
    report = run_hitting(HittingConfig(**data), Path(args.out or "runs/hitting"))
    worst_tail = max(r[1] - r[3] - 3 * r[2] for r in report.tail_rows)
    print(f"tail check: max(empirical - bound - 3se) = {worst_tail:.3g}")
    for row in report.moment_rows:
        print(f"  model {row[0]} x0={row[4]} E[tau^{row[5]}]={row[6]:.3f} log-bound={row[8]:.3f} {'ok' if row[-1] else 'FAIL'}")
    print(f"block-max growth within log trend: {report.block_growth_ok}")
    return EXIT_OK if report.passed else EXIT_AUDIT


def cmd_audit(args) -> int:
    target = args.path or args.out
    if target is None:
        raise UsageError("audit needs a directory of stored runs")
    ok, messages = harness.audit_directory(target)
    for m in messages:
        print(m)
    print("all episode audits pass" if ok else "episode audit FAILED")
    return EXIT_OK if ok else EXIT_AUDIT


def cmd_oracle(args) -> int:
    configs = _experiment_configs(args)
    root = Path(args.out or "runs/oracle")
    root.mkdir(parents=True, exist_ok=True)
    seen = set()
    for cfg in configs.values():
        key = (cfg.model, cfg.lam)
        if key in seen:
            continue
        seen.add(key)
        family = harness.family_for(cfg)
        path = root / f"oracle-model{cfg.model}-lam{cfg.lam}.csv"
        harness.write_oracle_csv(path, family)
        print(f"wrote {path} ({len(family.thetas)} grid points)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsde-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "run": (cmd_run, "run learning experiments and write regret/tv/episode CSVs"),
        "table": (cmd_table, "estimate the best-weight cost table for model two"),
        "drift": (cmd_drift, "check drift inequalities over the parameter grids"),
        "hitting": (cmd_hitting, "compare hitting-time statistics with their bounds"),
        "audit": (cmd_audit, "re-check episode-count bounds on stored runs"),
        "oracle": (cmd_oracle, "precompute policy oracle tables"),
    }
    for name, (fn, help_text) in handlers.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--preset", help=f"named preset ({', '.join(sorted(harness.PRESETS))})")
        p.add_argument("--seed", type=int)
        p.add_argument("--reps", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--out", help="output directory")
        if name == "audit":
            p.add_argument("path", nargs="?", help="directory holding runs.csv files")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    try:
        return args.handler(args)
    except ValidationError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
