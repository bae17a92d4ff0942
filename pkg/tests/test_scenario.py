import os

import numpy as np
import pytest
import yaml

from hdmi import cli
from hdmi.errors import ConfigError
from hdmi.simharness import ScenarioConfig, report, run_scenario
from hdmi.simharness import scenario as scenario_mod
from hdmi.simharness.config import derive_seed

SMALL = dict(
    name="tiny", n_replicates=4, seed=3, models=["unadjusted", "complete_case", "baseline"],
    synthetic={"n": 300, "seed": 2}, m=3, n_folds=3,
)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    res = run_scenario(ScenarioConfig.from_dict(SMALL), out_dir=str(out))
    return res, out


def test_outputs_written(tiny_run):
    res, out = tiny_run
    for f in ("replicates.csv", "diagnostics.csv", "summary.csv", "manifest.yaml"):
        assert (out / f).exists()
    assert len(res.rows) == 4 * 3
    man = yaml.safe_load((out / "manifest.yaml").read_text())
    assert man["master_seed"] == 3 and len(man["replicate_seeds"]) == 4
    assert man["config_hash"] == ScenarioConfig.from_dict(SMALL).config_hash()
    assert "numpy" in man["versions"]


def test_rerun_bit_identical(tiny_run, tmp_path):
    _, out = tiny_run
    run_scenario(ScenarioConfig.from_dict(SMALL), out_dir=str(tmp_path))
    for f in ("replicates.csv", "summary.csv", "diagnostics.csv", "manifest.yaml"):
        assert read(out / f) == read(tmp_path / f)


def test_parallel_identical(tiny_run, tmp_path):
    _, out = tiny_run
    run_scenario(ScenarioConfig.from_dict({**SMALL, "jobs": 2}), out_dir=str(tmp_path))
    for f in ("replicates.csv", "summary.csv", "diagnostics.csv", "manifest.yaml"):
        assert read(out / f) == read(tmp_path / f)


def test_metric_identity_on_output(tiny_run):
    res, _ = tiny_run
    for s in res.summaries.values():
        n = s.n_sim
        assert abs(s.rmse ** 2 - (s.bias ** 2 + s.variance * (n - 1) / n)) < 1e-12


def test_report(tiny_run):
    _, out = tiny_run
    text = report(str(out))
    assert report(str(out)) == text
    assert len([l for l in text.splitlines() if l.startswith(("unadjusted", "complete_case", "baseline"))]) == 3
    for m in ("rmse", "bias", "variance", "coverage"):
        assert (out / f"panel_{m}.csv").exists()
    import pandas as pd

    cov = pd.read_csv(out / "panel_coverage.csv")
    assert cov[["estimate", "lower", "upper"]].apply(lambda c: c.between(0, 1)).all().all()


def test_report_one_model(tmp_path):
    run_scenario(ScenarioConfig.from_dict({**SMALL, "models": ["unadjusted"]}), out_dir=str(tmp_path))
    lines = [l for l in report(str(tmp_path)).splitlines() if l.startswith("unadjusted")]
    assert len(lines) == 1


def test_report_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        report(str(tmp_path))


def test_replicate_failure_counted(monkeypatch, tmp_path):
    real = scenario_mod.ampute

    def flaky(cohort, spec, seed=None):
        if seed == derive_seed(3, 1, "amputation"):
            raise RuntimeError("boom")
        return real(cohort, spec, seed=seed)

    monkeypatch.setattr(scenario_mod, "ampute", flaky)
    res = run_scenario(ScenarioConfig.from_dict({**SMALL, "models": ["unadjusted"]}), out_dir=str(tmp_path))
    assert res.n_failed_replicates == 1
    assert res.summaries["unadjusted"].n_sim == 3 and res.summaries["unadjusted"].n_degenerate == 1


def test_seed_derivation_stable():
    assert derive_seed(1, 2, "baseline") == derive_seed(1, 2, "baseline")
    assert len({derive_seed(1, r, l) for r in range(20) for l in ("a", "b")}) == 40


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ScenarioConfig(n_replicates=0)
    with pytest.raises(ConfigError):
        ScenarioConfig(models=())
    with pytest.raises(ConfigError):
        ScenarioConfig(models=("nope",))
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"bogus": 1})
    p = tmp_path / "s.yaml"
    p.write_text(yaml.safe_dump(SMALL))
    assert ScenarioConfig.from_yaml(p) == ScenarioConfig.from_dict(SMALL)
    assert ScenarioConfig.from_dict(SMALL).with_overrides(jobs=3).config_hash() == ScenarioConfig.from_dict(SMALL).config_hash()


def test_out_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv("HDMI_OUT", str(tmp_path / "env"))
    assert ScenarioConfig().resolved_out_dir() == str(tmp_path / "env")


def test_oracle_beats_unadjusted(tmp_path):
    cfg = ScenarioConfig.from_dict({
        "name": "conf", "n_replicates": 100, "seed": 1, "models": ["unadjusted", "oracle"],
        "synthetic": {"n": 1000, "seed": 4}, "amputation": {"odds": [1, 1, 1, 1]},
    })
    res = run_scenario(cfg, write=False)
    assert abs(res.summaries["unadjusted"].bias) > abs(res.summaries["oracle"].bias)


# ------------------------------------------------------------------ CLI

def test_cli_generate_ampute(tmp_path, capsys):
    cfg = tmp_path / "syn.yaml"
    cfg.write_text(yaml.safe_dump({"synthetic": {"n": 200}}))
    assert cli.main(["generate", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "base.csv")]) == 0
    assert (tmp_path / "base.csv").exists() and (tmp_path / "base.schema.yaml").exists()
    assert cli.main(["ampute", "--input", str(tmp_path / "base.csv"), "--seed", "1",
                     "--out", str(tmp_path / "amp.csv")]) == 0
    from hdmi.tabular import load_cohort

    amp = load_cohort(tmp_path / "amp.csv")
    assert 0.4 < amp.mz2.mean() < 0.6


def test_cli_run_and_report(tmp_path, capsys):
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump({**SMALL, "n_replicates": 2}))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg), "--models", "unadjusted", "--jobs", "1",
                     "--seed", "8", "--out", str(out)]) == 0
    man = yaml.safe_load((out / "manifest.yaml").read_text())
    assert man["master_seed"] == 8 and man["config"]["models"] == ["unadjusted"]
    capsys.readouterr()
    assert cli.main(["report", str(out)]) == 0
    assert "unadjusted" in capsys.readouterr().out


def test_cli_env_out(tmp_path, monkeypatch):
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump({**SMALL, "n_replicates": 2, "models": ["unadjusted"]}))
    monkeypatch.setenv("HDMI_OUT", str(tmp_path / "envout"))
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "envout" / "summary.csv").exists()


def test_cli_errors(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump({**SMALL, "models": ["nope"]}))
    assert cli.main(["run", "--config", str(cfg)]) != 0
    assert cli.main(["report", str(tmp_path / "missing")]) != 0


def test_cli_scenario_failure_exit(tmp_path, monkeypatch):
    monkeypatch.setattr(scenario_mod, "ampute", lambda *a, **k: (_ for _ in ()).throw(RuntimeError("x")))
    cfg = tmp_path / "s.yaml"
    cfg.write_text(yaml.safe_dump({**SMALL, "n_replicates": 2, "models": ["unadjusted"]}))
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
