import csv
import json

import numpy as np
import pytest
import yaml
from pydantic import ValidationError

from tsde_lab import harness
from tsde_lab.cli import EXIT_AUDIT, EXIT_INVALID, EXIT_OK, main
from tsde_lab.families import model_one_family

THETAS = [(1.0, 0.5), (1.9, 0.5), (1.5, 1.4)]


@pytest.fixture(scope="module")
def small_family():
    return model_one_family(0.5, thetas=THETAS)


def tiny(**kw):
    base = dict(model="one", lam=0.5, reps=1, horizon=10, seed=3)
    base.update(kw)
    return harness.ExperimentConfig(**base)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_config_validation():
    with pytest.raises(ValidationError):
        tiny(reps=0)
    with pytest.raises(ValidationError):
        tiny(horizon=1)
    with pytest.raises(ValidationError):
        tiny(lam=0.4, reference_rates=True)
    tiny(lam=0.4)
    assert tiny().schedule_delta == 3.5
    assert tiny(model="two").schedule_delta == 3.0
    assert tiny(workers=4).config_hash() == tiny().config_hash()
    assert tiny(seed=4).config_hash() != tiny().config_hash()


def test_presets_exist():
    cfgs = harness.preset_configs("arrival-sweep-model1-desk")
    assert sorted(c.lam for c in cfgs.values()) == [0.3, 0.5, 0.7]
    assert all(c.reps == 200 and c.horizon == 5000 for c in cfgs.values())
    with pytest.raises(ValueError):
        harness.preset_configs("nope")


def test_replication_streams_are_distinct():
    a = np.random.default_rng(harness.replication_seed(0, 0)).random(4)
    b = np.random.default_rng(harness.replication_seed(0, 1)).random(4)
    assert not np.array_equal(a, b)
    again = np.random.default_rng(harness.replication_seed(0, 0)).random(4)
    assert np.array_equal(a, again)


def test_rerun_is_byte_identical(tmp_path, small_family):
    cfg = tiny()
    harness.run_experiment(cfg, tmp_path / "a", family=small_family)
    harness.run_experiment(cfg, tmp_path / "b", family=small_family)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "manifest.json" in names and "regret.csv" in names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_schemas_and_manifest(tmp_path, small_family):
    harness.run_experiment(tiny(reps=2, horizon=50), tmp_path, family=small_family)
    assert read_rows(tmp_path / "regret.csv")[0] == list(harness.REGRET_HEADER)
    assert read_rows(tmp_path / "tv.csv")[0] == list(harness.TV_HEADER)
    assert read_rows(tmp_path / "episodes.csv")[0] == list(harness.EPISODE_HEADER)
    assert read_rows(tmp_path / "runs.csv")[0] == list(harness.RUNS_HEADER)
    assert len(read_rows(tmp_path / "regret.csv")) == 51
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config_hash"] == tiny(reps=2, horizon=50).config_hash()
    for name, digest in manifest["files"].items():
        assert harness.sha256_file(tmp_path / name) == digest


def test_aggregate_matches_hand_average(small_family):
    cfg = tiny(reps=3, horizon=200)
    results = harness.run_replications(cfg, small_family)
    curves = np.array([r.regret for r in results])
    agg = harness.aggregate(curves)
    hand = (curves[0] + curves[1] + curves[2]) / 3
    assert np.allclose(agg.mean, hand, rtol=0, atol=1e-12)
    assert np.all(agg.std >= 0)
    assert agg.reps == 3 and agg.t[-1] == 200


def test_parallel_fanout_matches_serial(small_family):
    serial = harness.run_replications(tiny(reps=3, horizon=100), small_family)
    pooled = harness.run_replications(tiny(reps=3, horizon=100, workers=2), small_family)
    for a, b in zip(serial, pooled):
        assert a.rep == b.rep and np.array_equal(a.regret, b.regret)


def test_truth_is_drawn_per_replication(small_family):
    cfg = tiny(reps=30)
    prior = harness.make_prior(cfg, small_family)
    drawn = {harness.draw_truth(cfg, small_family, prior, r)[0] for r in range(30)}
    assert len(drawn) > 1
    fixed = tiny(theta_star=(1.9, 0.5))
    assert harness.draw_truth(fixed, small_family, prior, 0)[0] == 1


def test_growth_fit_on_power_laws():
    t = np.arange(1, 5001, dtype=float)
    rng = np.random.default_rng(0)
    noisy_sqrt = np.sqrt(t) * (1 + 0.01 * rng.standard_normal((20, 1)))
    fit = harness.fit_growth_exponent(noisy_sqrt)
    assert fit.exponent == pytest.approx(0.5, abs=0.01)
    assert fit.ci_low <= fit.exponent <= fit.ci_high
    assert harness.fit_growth_exponent(t[None, :]).exponent == pytest.approx(1.0, abs=0.01)
    with pytest.raises(harness.NonpositiveRegretWindow):
        harness.fit_growth_exponent(-t[None, :])


def test_cli_run_audit_and_errors(tmp_path, capsys):
    out = tmp_path / "smoke"
    assert main(["run", "--preset", "smoke", "--out", str(out), "--horizon", "60"]) == EXIT_OK
    assert (out / "model1" / "regret.csv").exists()
    assert main(["audit", str(out)]) == EXIT_OK
    assert main(["run", "--preset", "no-such-preset"]) == EXIT_INVALID
    assert main(["run"]) == EXIT_INVALID
    assert main(["frobnicate"]) == EXIT_INVALID
    assert main(["audit", str(tmp_path / "empty")]) == EXIT_INVALID


def test_cli_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(yaml.safe_dump({"model": "one", "lam": 0.5, "reps": 1, "horizon": 30, "theta_star": [1.0, 0.5]}))
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--reps", "2"]) == EXIT_OK
    assert len(read_rows(out / "regret.csv")) == 31
    assert read_rows(out / "regret.csv")[1][3] == "2"
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"model": "three"}))
    assert main(["run", "--config", str(bad)]) == EXIT_INVALID


def test_audit_flags_a_doctored_run(tmp_path, small_family):
    harness.run_experiment(tiny(reps=1, horizon=100), tmp_path, family=small_family)
    rows = read_rows(tmp_path / "runs.csv")
    header = rows[0]
    rows[1][header.index("K_M")] = "100000"
    with open(tmp_path / "runs.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    assert main(["audit", str(tmp_path)]) == EXIT_AUDIT


def test_cli_table_small(tmp_path):
    out = tmp_path / "table"
    cfg = tmp_path / "table.yaml"
    cfg.write_text(yaml.safe_dump({"lam": 0.5, "mc": {"horizon": 3000, "burn_in": 300, "reps": 2}}))
    code = main(["table", "--config", str(cfg), "--out", str(out)])
    assert code == EXIT_OK
    rows = read_rows(out / "table.csv")
    assert rows[0] == list(harness.TABLE_HEADER)
    assert len(rows) == 29
    assert [(float(r[0]), float(r[1])) for r in rows[1:3]] == [(0.7, 0.5), (0.9, 0.5)]


def test_oracle_table_roundtrip(tmp_path, small_family):
    path = tmp_path / "oracle.csv"
    harness.write_oracle_csv(path, small_family)
    table = harness.load_oracle_table(path)
    again = model_one_family(0.5, thetas=THETAS, table=table)
    assert [p.t for p in again.policies] == [p.t for p in small_family.policies]
    assert np.array_equal(again.costs, small_family.costs)
