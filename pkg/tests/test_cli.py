import json

import pandas as pd
import pytest

from app import cli
from app.schemas.findings import FindingsReport
from app.schemas.ida import IdaReport
from tests.conftest import quick_run_config


def write_config(path, config):
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


def test_ida_writes_report_and_figures(run_config_path, tmp_path):
    out = tmp_path / "ida"
    assert cli.main(["ida", "--config", str(run_config_path), "--out", str(out)]) == 0

    result = IdaReport.model_validate_json((out / "ida_report.json").read_text(encoding="utf-8"))
    assert result.n_rows == 160
    assert result.roles.covariates == ["X1", "X14", "X17", "X2", "X3", "X5"]
    assert result.figures
    for figure in result.figures:
        assert (out / figure).is_file()


def test_ida_does_not_touch_the_effect(run_config_path, tmp_path):
    out = tmp_path / "ida"
    cli.main(["ida", "--config", str(run_config_path), "--out", str(out)])
    assert not (out / "pseudo_outcomes.csv").exists()
    assert not (out / "findings.json").exists()


def test_missing_covariate_is_a_data_error(tmp_path, run_config_path, caplog):
    config = quick_run_config("data/trial.csv")
    config["plan"]["covariates"].append({"name": "X99"})
    path = write_config(run_config_path.parent / "bad_plan.json", config)
    assert cli.main(["ida", "--config", str(path), "--out", str(tmp_path / "out")]) == 3
    assert "missing role column X99" in caplog.text


def test_invalid_config_exit_code(tmp_path):
    path = write_config(tmp_path / "config.json", {"data": "trial.csv"})
    assert cli.main(["analyze", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
    (tmp_path / "broken.json").write_text("{not json", encoding="utf-8")
    assert cli.main(["ida", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path / "out")]) == 2
    assert cli.main(["ida", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "out")]) == 2


def test_moderate_evidence_needs_a_source(tmp_path):
    config = quick_run_config("trial.csv")
    config["plan"]["covariates"][1].pop("source")
    path = write_config(tmp_path / "config.json", config)
    assert cli.main(["analyze", "--config", str(path), "--out", str(tmp_path / "out")]) == 2


def test_command_is_required():
    with pytest.raises(SystemExit):
        cli.main([])


def test_analyze_outputs(run_config_path, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["analyze", "--config", str(run_config_path), "--out", str(out)]) == 0

    findings = FindingsReport.model_validate_json((out / "findings.json").read_text(encoding="utf-8"))
    assert findings.seed == 3
    assert findings.het_test.n_permutations == 99
    assert 1 / 100 <= findings.het_test.p_value <= 1.0
    assert sorted(findings.importance.ranking) == sorted(findings.dataset.covariates)
    assert [e.name for e in findings.credibility] == ["X1", "X14", "X17", "X2", "X3", "X5"]
    assert findings.rules

    po = pd.read_csv(out / "pseudo_outcomes.csv")
    assert list(po.columns) == ["row_id", "phi", "pi_hat", "mu0_hat", "mu1_hat", "fold"]
    assert len(po) == 160
    assert sorted(po["fold"].unique()) == [0, 1]
    assert findings.cate.ate.estimate == pytest.approx(po["phi"].mean())

    markdown = (out / "findings.md").read_text(encoding="utf-8")
    assert markdown.index("## Global evidence against homogeneity") < markdown.index("## Variable importance")
    for entry in findings.displays.manifest.figures:
        assert (out / "figures" / entry.svg).is_file()
        assert (out / "figures" / entry.data).is_file()


def test_analyze_is_reproducible(run_config_path, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert cli.main(["analyze", "--config", str(run_config_path), "--out", str(first)]) == 0
    assert cli.main(["analyze", "--config", str(run_config_path), "--out", str(second)]) == 0
    assert (first / "findings.json").read_bytes() == (second / "findings.json").read_bytes()
    assert (first / "pseudo_outcomes.csv").read_bytes() == (second / "pseudo_outcomes.csv").read_bytes()
    for svg in sorted((first / "figures").glob("*.svg")):
        assert svg.read_bytes() == (second / "figures" / svg.name).read_bytes()


def test_seed_override(run_config_path, tmp_path):
    out = tmp_path / "seeded"
    assert cli.main(["analyze", "--config", str(run_config_path), "--out", str(out), "--seed", "11"]) == 0
    findings = FindingsReport.model_validate_json((out / "findings.json").read_text(encoding="utf-8"))
    assert findings.seed == 11
    assert findings.het_test.seed == 11


def test_report_rerenders_with_sensitivity(run_config_path, tmp_path):
    main_out, rerun_out = tmp_path / "main", tmp_path / "rerun"
    assert cli.main(["analyze", "--config", str(run_config_path), "--out", str(main_out)]) == 0
    assert cli.main(["analyze", "--config", str(run_config_path), "--out", str(rerun_out), "--seed", "4"]) == 0

    config = quick_run_config("data/trial.csv", sensitivity=[
        {"label": "other seed", "findings": str(rerun_out / "findings.json")},
        {"label": "missing", "findings": "nowhere/findings.json"},
    ])
    path = write_config(run_config_path.parent / "with_sensitivity.json", config)
    assert cli.main(["report", "--config", str(path), "--out", str(main_out)]) == 0

    findings = FindingsReport.model_validate_json((main_out / "findings.json").read_text(encoding="utf-8"))
    rerun, missing = findings.sensitivity
    assert rerun.available and rerun.p_value is not None
    assert 0 <= rerun.top_k_overlap <= findings.importance.top_k
    assert not missing.available and missing.error == "findings file not found"
    assert "## Sensitivity analyses" in (main_out / "findings.md").read_text(encoding="utf-8")


def test_report_without_findings(run_config_path, tmp_path):
    assert cli.main(["report", "--config", str(run_config_path), "--out", str(tmp_path / "empty")]) == 2


def test_simulate(tmp_path):
    scenario = write_config(tmp_path / "scenario.json", {"n": 90, "seed": 21})
    first, second = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", str(scenario), "--out", str(first)]) == 0
    assert cli.main(["simulate", "--config", str(scenario), "--out", str(second)]) == 0
    assert sorted(p.name for p in first.iterdir()) == ["trial.csv", "truth.csv"]
    for name in ("trial.csv", "truth.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()

    trial = pd.read_csv(first / "trial.csv")
    assert len(trial) == 90
    assert list(trial.columns[:2]) == ["Y", "A"]


def test_simulate_seed_override_and_bad_scenario(tmp_path):
    scenario = write_config(tmp_path / "scenario.json", {"n": 40, "seed": 21})
    assert cli.main(["simulate", "--config", str(scenario), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["simulate", "--config", str(scenario), "--out", str(tmp_path / "b"), "--seed", "22"]) == 0
    assert (tmp_path / "a" / "trial.csv").read_bytes() != (tmp_path / "b" / "trial.csv").read_bytes()

    bad = write_config(tmp_path / "bad.json", {"n": 40, "p": 10})
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "c")]) == 2


def test_ida_without_missing_values(run_config_path, tmp_path):
    out = tmp_path / "ida"
    cli.main(["ida", "--config", str(run_config_path), "--out", str(out)])
    result = IdaReport.model_validate_json((out / "ida_report.json").read_text(encoding="utf-8"))
    assert set(result.missingness.fractions.values()) == {0.0}
    assert [(p.missing, p.count) for p in result.missingness.patterns] == [([], 160)]


def test_findings_json_section_order(run_config_path, tmp_path):
    out = tmp_path / "run"
    cli.main(["analyze", "--config", str(run_config_path), "--out", str(out)])
    keys = list(json.loads((out / "findings.json").read_text(encoding="utf-8")))
    assert keys.index("het_test") < keys.index("importance") < keys.index("displays") < keys.index("credibility")


def test_analyze_independent_of_workers(run_config_path, tmp_path, monkeypatch):
    from app.core.config import settings

    assert cli.main(["analyze", "--config", str(run_config_path), "--out", str(tmp_path / "serial")]) == 0
    monkeypatch.setattr(settings, "N_JOBS", 2)
    assert cli.main(["analyze", "--config", str(run_config_path), "--out", str(tmp_path / "parallel")]) == 0
    serial = (tmp_path / "serial" / "findings.json").read_bytes()
    assert serial == (tmp_path / "parallel" / "findings.json").read_bytes()


def test_simulate_rejects_empty_trial(tmp_path):
    scenario = write_config(tmp_path / "scenario.json", {"n": 0})
    assert cli.main(["simulate", "--config", str(scenario), "--out", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out").exists()
