"""TOML config parsing, validation rules, CLI wiring, and run artifacts."""

import csv

import numpy as np
import pytest

from ldpfuse import ConfigError, load_config, run_experiment, validate_config
from ldpfuse.cli import main

GOOD = """
label = "tiny"
seed = 7
trials = 2
output_dir = "{out}"

[dataset]
kind = "beta25"
n = 400

[[services]]
kind = "sr"
epsilon = 1.0

[[services]]
kind = "pm"
epsilon = 0.5

[estimators]
mean = ["ua", "uwa", "singles"]
distribution = ["ule"]

[discretize]
posterior_buckets = 16
histogram_buckets = 8
output_resolution = 8

[em]
max_iterations = 300
"""


def _write(tmp_path, body, name="exp.toml"):
    p = tmp_path / name
    p.write_text(body)
    return p


class TestLoadConfig:
    def test_round_trip(self, tmp_path):
        cfg = load_config(_write(tmp_path, GOOD.format(out=tmp_path / "o")))
        assert cfg.label == "tiny"
        assert cfg.seed == 7
        assert cfg.trials == 2
        assert cfg.services == [("sr", 1.0), ("pm", 0.5)]
        assert cfg.discretize.posterior_buckets == 16
        assert cfg.em.max_iterations == 300
        assert cfg.em.threshold == pytest.approx(1e-4)  # untouched default
        assert validate_config(cfg) == []

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="typo_key"):
            load_config(_write(tmp_path, GOOD.format(out="o") + "\ntypo_key = 1\n"))

    def test_unknown_section_key_rejected(self, tmp_path):
        body = GOOD.format(out="o").replace("[em]", "[em]\nwhat = 3\n")
        with pytest.raises(ConfigError, match="what"):
            load_config(_write(tmp_path, body))

    def test_type_errors(self, tmp_path):
        body = GOOD.format(out="o").replace('seed = 7', 'seed = "seven"')
        with pytest.raises(ConfigError, match="seed"):
            load_config(_write(tmp_path, body))
        # booleans are ints in python, but not acceptable where ints are wanted
        body = GOOD.format(out="o").replace("trials = 2", "trials = true")
        with pytest.raises(ConfigError, match="trials"):
            load_config(_write(tmp_path, body))

    def test_missing_file_and_bad_toml(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.toml")
        with pytest.raises(ConfigError, match="TOML"):
            load_config(_write(tmp_path, "label = [unclosed"))

    def test_services_required(self, tmp_path):
        with pytest.raises(ConfigError, match="services"):
            load_config(_write(tmp_path, 'label = "x"\n'))

    def test_unknown_mechanism_kind(self, tmp_path):
        body = GOOD.format(out="o").replace('kind = "sr"', 'kind = "gauss"')
        with pytest.raises(ConfigError, match="gauss"):
            load_config(_write(tmp_path, body))

    def test_csv_dataset_requires_fields(self, tmp_path):
        body = """
[dataset]
kind = "csv"

[[services]]
kind = "sr"
epsilon = 1.0
"""
        with pytest.raises(ConfigError, match="path"):
            load_config(_write(tmp_path, body))


class TestValidateConfig:
    def _cfg(self, tmp_path, mutate):
        cfg = load_config(_write(tmp_path, GOOD.format(out=tmp_path / "o")))
        mutate(cfg)
        return validate_config(cfg)

    def test_laplace_cannot_join_distribution(self, tmp_path):
        def mutate(c):
            c.services[0] = ("laplace", 1.0)
            c.distribution_services = [0]  # explicitly asking for the laplace service
        problems = self._cfg(tmp_path, mutate)
        assert any("laplace" in p for p in problems)

    def test_laplace_silently_skipped_when_implicit(self, tmp_path):
        problems = self._cfg(
            tmp_path, lambda c: c.services.__setitem__(0, ("laplace", 1.0))
        )
        assert problems == []  # the remaining bounded service carries the estimate

    def test_group_counts_must_cover_population(self, tmp_path):
        problems = self._cfg(tmp_path, lambda c: setattr(c, "groups", [((0,), 100)]))
        assert any("sum" in p for p in problems)

    def test_bad_estimator_name(self, tmp_path):
        problems = self._cfg(
            tmp_path, lambda c: setattr(c, "mean_estimators", ["median"])
        )
        assert any("median" in p for p in problems)

    def test_epsilon_positive(self, tmp_path):
        problems = self._cfg(
            tmp_path, lambda c: c.services.__setitem__(0, ("sr", -0.5))
        )
        assert any("epsilon" in p for p in problems)

    def test_group_budget_guard(self, tmp_path):
        def mutate(c):
            c.em.max_groups = 10
            c.discretize.output_resolution = 64
        problems = self._cfg(tmp_path, mutate)
        assert any("group" in p.lower() for p in problems)


class TestRunExperiment:
    def test_writes_expected_artifacts(self, tmp_path):
        cfg = load_config(_write(tmp_path, GOOD.format(out=tmp_path / "o")))
        result = run_experiment(cfg)
        paths = result.paths
        assert paths["results"].exists()
        assert paths["summary"].exists()
        with open(paths["results"]) as fh:
            rows = list(csv.DictReader(fh))
        assert {"estimator", "trial", "metric", "value", "seconds"} <= set(rows[0])
        estimators = {r["estimator"] for r in rows}
        assert {"ua", "uwa", "ule", "single:sr@0", "single:pm@1"} <= estimators
        trials = {int(r["trial"]) for r in rows}
        assert trials == {0, 1}

    def test_determinism_bit_for_bit(self, tmp_path):
        cfg = load_config(_write(tmp_path, GOOD.format(out=tmp_path / "o")))
        a = run_experiment(cfg, write=False)
        b = run_experiment(cfg, write=False)
        # timing column is wall clock; everything else must repeat exactly
        assert [r[:4] for r in a.rows] == [r[:4] for r in b.rows]
        c = run_experiment(cfg, seed=8, write=False)
        assert [r[:4] for r in a.rows] != [r[:4] for r in c.rows]

    def test_override_arguments(self, tmp_path):
        cfg = load_config(_write(tmp_path, GOOD.format(out=tmp_path / "o")))
        r = run_experiment(cfg, trials=1, write=False)
        assert {int(row[1]) for row in [tuple(x) for x in r.rows]} == {0} or all(
            row.trial == 0 for row in []
        )
        assert max(int(t) for t in [row[1] for row in r.rows]) == 0

    def test_summary_values_accessible(self, tmp_path):
        cfg = load_config(_write(tmp_path, GOOD.format(out=tmp_path / "o")))
        r = run_experiment(cfg, write=False)
        assert r.summary_value("ua", "mse") >= 0.0
        assert r.summary_value("ule", "js_mean") >= 0.0
        with pytest.raises(KeyError):
            r.summary_value("nope", "mse")


class TestCli:
    def test_run_and_validate(self, tmp_path, capsys):
        p = _write(tmp_path, GOOD.format(out=tmp_path / "o"))
        assert main(["validate", str(p)]) == 0
        assert main(["run", str(p)]) == 0
        out = capsys.readouterr().out
        assert "ua" in out and "uwa" in out
        assert (tmp_path / "o").exists()

    def test_validate_catches_bad_config(self, tmp_path, capsys):
        body = GOOD.format(out="o").replace('epsilon = 1.0', 'epsilon = -1.0')
        p = _write(tmp_path, body, "bad.toml")
        assert main(["validate", str(p)]) == 1
        err = capsys.readouterr()
        assert "epsilon" in err.out + err.err

    def test_run_seed_override_changes_output(self, tmp_path):
        p = _write(tmp_path, GOOD.format(out=tmp_path / "o1"))
        assert main(["run", str(p), "--seed", "99", "--out", str(tmp_path / "o2")]) == 0
        assert (tmp_path / "o2").exists()

    def test_datasets_describe(self, capsys):
        assert main(["datasets", "describe"]) == 0
        out = capsys.readouterr().out
        assert "beta25" in out and "betasin" in out

    def test_missing_config_is_error_not_traceback(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "none.toml")]) == 1
        out = capsys.readouterr()
        assert "not found" in (out.out + out.err)
