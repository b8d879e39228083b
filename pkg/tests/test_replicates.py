import importlib.util
from argparse import Namespace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from app.schemas.plan import LearnerConfig
from app.schemas.scenario import ScenarioSpec
from app.services import benchgen, cate
from app.services.pipeline import create_analysis_dataset

SCRIPT = Path(__file__).resolve().parents[1] / "scripts" / "replicate_study.py"


@pytest.fixture(scope="module")
def study():
    spec = importlib.util.spec_from_file_location("replicate_study", SCRIPT)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def run(study, name: str, replicates: int, **overrides) -> dict:
    args = Namespace(n=500, permutations=199, trees=100, k_folds=2, seed=20240101, oracle=True, jobs=1,
                     out=None)
    for key, value in overrides.items():
        setattr(args, key, value)
    frame = pd.DataFrame([study.replicate(name, r, args) for r in range(replicates)])
    return study.summarize(name, frame)


@pytest.mark.slow
def test_calibration_at_nominal_level(study):
    summary = run(study, "calibration", 200, permutations=999)
    assert summary["replicates"] == 200
    assert 0.02 <= summary["rejection_rate_0.05"] <= 0.10


@pytest.mark.slow
def test_heterogeneous_trials_give_smaller_p_values(study):
    power = run(study, "power", 10)
    constant = run(study, "calibration", 10)
    assert power["median_p"] < constant["median_p"]
    assert power["rejection_rate_0.05"] > constant["rejection_rate_0.05"]


@pytest.mark.slow
def test_ranking_recovers_effect_modifiers(study):
    summary = run(study, "ranking", 10)
    assert summary["most_frequent_top1"] == "X1"
    assert summary["x1_top2_rate"] >= 0.6
    assert summary["x14_top5_rate"] >= 0.5
    assert summary["interaction_detected_rate"] >= 0.6


@pytest.mark.slow
def test_fitted_outcome_models_track_the_effect():
    trial = benchgen.generate(ScenarioSpec(n=500, seed=31))
    ds, _ = create_analysis_dataset(trial.dataset)
    po = cate.pseudo_outcomes(ds, cate.assign_folds(ds, 2, 31), LearnerConfig())
    fitted = po.mu1_hat - po.mu0_hat
    subgroup = trial.tau > 0
    assert np.corrcoef(fitted, trial.tau)[0, 1] > 0.2
    assert fitted[subgroup].mean() - fitted[~subgroup].mean() > 0.2
