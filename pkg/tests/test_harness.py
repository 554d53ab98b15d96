import copy
import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from approxcd.cli import main
from approxcd.core import RngStream, ValidationError
from approxcd.harness import (
    REPLICATE_FIELDS,
    SUMMARY_FIELDS,
    ExperimentConfig,
    StageError,
    load_config,
    oracle_suite,
    refinement_bias_check,
    replicates_path,
    run_coverage,
    run_single,
    save_coverage,
    simulate_dataset,
    write_csv,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "name": "small",
    "model": {"name": "cauchy", "n": 100, "parameterization": "location", "summary": "median", "scale": 0.55},
    "theta0": [10.0],
    "method": "r-acc",
    "initial": {"kind": "minibatch", "estimator": "median"},
    "prior": {"kind": "flat"},
    "sampler": {"kernel": "uniform", "acceptance": [0.05, 0.2], "n_proposals": 2000},
    "region": {"kind": "interval", "maps": "location"},
    "adjust": [True, False],
    "alpha": [0.05, 0.1],
    "replications": 6,
    "seed": 3,
}


def _cfg(**changes):
    raw = copy.deepcopy(SMALL)
    raw.update(changes)
    return ExperimentConfig.from_mapping(raw)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert cfg.replications >= 1
    full = load_config(path, paper_scale=True)
    assert full.name == cfg.name


def test_paper_scale_overrides():
    cfg = load_config(CONFIGS / "cauchy_location_median_racc.yaml", paper_scale=True)
    assert cfg.replications == 300
    assert cfg.sampler["n_proposals"] == 100_000
    assert cfg.sampler["acceptance"] == [0.005, 0.1, 0.4]


@pytest.mark.parametrize("bad", [
    {"sampler": {"kernel": "gaussian", "epsilon": [-0.1], "target_accepted": 10}},
    {"sampler": {"kernel": "uniform", "acceptance": [1.5], "n_proposals": 10}},
    {"sampler": {"epsilon": [0.1], "acceptance": [0.1], "n_proposals": 10}},
    {"method": "mcmc"},
    {"theta0": [1.0, 2.0]},
    {"alpha": [0.0]},
    {"replications": 0},
    {"colour": "blue"},
    {"model": {"name": "cauchy", "n": 100, "parameterization": "location", "summary": "mad"}},
])
def test_malformed_configs_fail_validation(bad):
    with pytest.raises(ValidationError):
        _cfg(**bad)


def test_run_single_rows():
    cfg = _cfg()
    run = run_single(cfg, simulate_dataset(cfg, 0), RngStream(cfg.seed, (0,)))
    assert len(run.rows) == 2 * 2 * 2
    assert set(run.rows[0]) == set(REPLICATE_FIELDS)
    assert all(r["var_reduced"] == 1 for r in run.rows)
    assert all(r["attempts"] == 2000 for r in run.rows)


def test_racc_with_prior_matches_rabc():
    raw = dict(SMALL, prior={"kind": "normal", "mean": 10.0, "sd": 1.0}, adjust=[False])
    abc = ExperimentConfig.from_mapping(dict(raw, method="r-abc"))
    acc = ExperimentConfig.from_mapping(dict(raw, method="r-acc", initial={"kind": "prior"}))
    data = simulate_dataset(abc, 1)
    a = run_single(abc, data, RngStream(5))
    b = run_single(acc, data, RngStream(5))
    assert a.rows == b.rows
    for key in a.particles:
        assert np.array_equal(a.particles[key].thetas, b.particles[key].thetas)


def test_oracle_columns():
    cfg = load_config(CONFIGS / "gaussian_normal_initial.yaml", replications=1)
    run = run_single(cfg, simulate_dataset(cfg, 0), RngStream(0))
    row = run.rows[0]
    assert row["oracle_mean"] != "" and row["sample_mean"] != ""
    se = (row["oracle_var"] / row["accepted"]) ** 0.5
    assert abs(row["sample_mean"] - row["oracle_mean"]) < 4 * se


def test_stage_errors_are_labelled():
    cfg = _cfg(sampler={"kernel": "uniform", "epsilon": [1e-12], "target_accepted": 5, "max_attempts": 100})
    with pytest.raises(StageError, match="sample"):
        run_single(cfg, simulate_dataset(cfg, 0), RngStream(0))


def test_single_replication_coverage_is_binary():
    res = run_coverage(_cfg(replications=1))
    assert all(r["coverage"] in (0.0, 1.0) for r in res.summary)


def test_coverage_accounting_and_failures():
    res = run_coverage(_cfg())
    assert not res.failures and not res.failed
    for row in res.summary:
        reps = [r for r in res.replicates if (r["tolerance"], r["adjusted"], r["alpha"], r["param"])
                == (row["tolerance"], row["adjusted"], row["alpha"], row["param"])]
        assert row["total_attempts"] == sum(r["attempts"] for r in reps)
        assert 0 <= row["coverage"] <= 1
        assert row["replications"] == 6


def test_failures_excluded_and_flagged():
    cfg = _cfg(sampler={"kernel": "uniform", "epsilon": [1e-12], "target_accepted": 5, "max_attempts": 100})
    res = run_coverage(cfg)
    assert len(res.failures) == 6 and res.failed
    assert "ToleranceTooSmallError" in res.failures[0]


def test_csv_is_reproducible(tmp_path):
    cfg = _cfg()
    save_coverage(run_coverage(cfg), cfg, tmp_path / "a.csv")
    save_coverage(run_coverage(cfg), cfg, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert replicates_path(tmp_path / "a.csv").read_bytes() == replicates_path(tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == ",".join(SUMMARY_FIELDS)
    meta = json.loads((tmp_path / "a.csv.meta.json").read_text())
    assert "wall_time" in meta


def test_parallel_matches_serial():
    serial = run_coverage(_cfg(replications=4))
    parallel = run_coverage(_cfg(replications=4, workers=2))
    assert write_csv(None, serial.replicates, REPLICATE_FIELDS) == write_csv(None, parallel.replicates,
                                                                           REPLICATE_FIELDS)


def test_csv_formatting():
    text = write_csv(None, [{"a": 1 / 3, "b": 7, "c": True}], ("a", "b", "c", "d"))
    assert text == "a,b,c,d\n0.333333,7,1,\n"


def test_oracle_suite_small():
    rows = oracle_suite(seed=1, accepted=2000, epsilons=(0.2,), mus=(0.5,), bs=(0.0, 2.0))
    assert len(rows) == 2 and all(r["passed"] for r in rows)


def _write_yaml(tmp_path, raw):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(raw))
    return p


def test_cli_coverage(tmp_path):
    cfg = _write_yaml(tmp_path, dict(SMALL, replications=2))
    out = tmp_path / "cov.csv"
    res = CliRunner().invoke(main, ["coverage", "--config", str(cfg), "--out", str(out), "--seed", "9"])
    assert res.exit_code == 0, res.output
    assert out.read_text().splitlines()[0] == ",".join(SUMMARY_FIELDS)
    assert "coverage=" in res.output


def test_cli_run_with_data_file(tmp_path):
    cfg = _write_yaml(tmp_path, SMALL)
    data = tmp_path / "x.txt"
    np.savetxt(data, np.random.default_rng(0).standard_cauchy(100) * 0.55 + 10)
    out = tmp_path / "run.csv"
    res = CliRunner().invoke(main, ["run", "--config", str(cfg), "--data", str(data), "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert len(out.read_text().splitlines()) == 1 + 8


def test_cli_validation_exit_code(tmp_path):
    bad = dict(SMALL, sampler={"kernel": "gaussian", "epsilon": [-1.0], "target_accepted": 5})
    cfg = _write_yaml(tmp_path, bad)
    res = CliRunner().invoke(main, ["coverage", "--config", str(cfg), "--out", str(tmp_path / "o.csv")])
    assert res.exit_code == 2
    assert not (tmp_path / "o.csv").exists()


def test_cli_failure_exit_code(tmp_path):
    bad = dict(SMALL, replications=2,
               sampler={"kernel": "uniform", "epsilon": [1e-12], "target_accepted": 5, "max_attempts": 50})
    cfg = _write_yaml(tmp_path, bad)
    res = CliRunner().invoke(main, ["coverage", "--config", str(cfg), "--out", str(tmp_path / "o.csv")])
    assert res.exit_code == 3


def test_cli_oracle_check(tmp_path):
    res = CliRunner().invoke(main, ["oracle-check", "--accepted", "1000", "--out", str(tmp_path / "o.csv")])
    assert res.exit_code == 0, res.output
    assert "12/12" in res.output


def test_cli_figure1_shape(tmp_path):
    out = tmp_path / "fig.csv"
    res = CliRunner().invoke(main, ["figure1", "--n", "50", "--epsilon", "0.1", "--epsilon", "0.05",
                                    "--particles", "300", "--out", str(out)])
    assert res.exit_code == 0, res.output
    grid = (tmp_path / "fig_n50.csv").read_text().splitlines()
    per_eps = [sum(line.startswith(e + ",") for line in grid[1:]) for e in ("0.1", "0.05")]
    assert per_eps[0] == per_eps[1] and sum(per_eps) == len(grid) - 1
    assert len(out.read_text().splitlines()) == 1 + 2 * 2


def test_refinement_removes_injected_bias():
    cfg = ExperimentConfig.from_mapping({
        "name": "gauss-refined", "model": {"name": "gaussian", "n": 400}, "theta0": [1.0],
        "initial": {"kind": "refined_minibatch", "estimator": "mean",
                    "pmc": {"particles": 500, "iterations": 2, "acceptance": 0.2}},
        "prior": {"kind": "flat", "lo": -9.0, "hi": 11.0},
        "sampler": {"acceptance": [0.1], "n_proposals": 1000}, "seed": 4,
    })
    rows = refinement_bias_check(cfg, trials=3, bias=0.5)
    assert [r["improved"] for r in rows] == [1, 1, 1]
    assert all(r["crude_mean"] - r["refined_mean"] > 0.4 for r in rows)
