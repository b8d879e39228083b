import json
from pathlib import Path

import numpy as np
import pytest

from app.core.config import settings
from app.models.dataset import TREATMENT_LEVELS, Column, Dataset, Roles
from app.schemas.importance import ForestSummary, ImportanceReport
from app.schemas.scenario import ScenarioSpec
from app.services import benchgen


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setattr(settings, "N_JOBS", 1)


def make_dataset(y, a, **covariates) -> Dataset:
    """Dataset from arrays; string-valued covariates become categorical"""
    columns = [
        Column.continuous("Y", y),
        Column.categorical("A", [TREATMENT_LEVELS[int(v)] for v in a], levels=TREATMENT_LEVELS),
    ]
    for name, values in covariates.items():
        values = list(values)
        if any(isinstance(v, str) for v in values):
            columns.append(Column.categorical(name, values))
        else:
            columns.append(Column.continuous(name, values))
    return Dataset(columns=tuple(columns), roles=Roles("Y", "A", tuple(covariates)))


@pytest.fixture
def small_trial():
    return benchgen.generate(ScenarioSpec(n=200, seed=7))


@pytest.fixture
def random_dataset():
    rng = np.random.default_rng(11)
    n = 120
    return make_dataset(
        rng.normal(size=n),
        np.arange(n) % 2,
        x1=rng.normal(size=n),
        x2=rng.uniform(size=n),
        g=rng.choice(["a", "b", "c"], size=n).tolist(),
    )


def quick_run_config(data: str, **overrides) -> dict:
    config = {
        "data": data,
        "plan": {
            "outcome": "Y",
            "treatment": "A",
            "covariates": [
                {"name": "X1", "evidence": "high", "expected_direction": "positive", "source": "prior trial"},
                {"name": "X14", "evidence": "moderate", "source": "mechanism"},
                {"name": "X17", "evidence": "none"},
                {"name": "X2"},
                {"name": "X3"},
                {"name": "X5"},
            ],
            "seed": 3,
            "k_folds": 2,
            "n_permutations": 99,
            "n_trees": 10,
            "bootstrap_reps": 2,
        },
        "learners": {
            "library": [{"kind": "lasso"}, {"kind": "tree", "params": {"max_depth": 2}}],
            "cv_folds": 2,
        },
        "importance": {"top_k": 3, "grid_size": 4, "bootstrap_trees": 3, "n_repeats": 1, "pd_covariates": 1},
        "displays": {"n_grid": 10, "n_covariates": 2},
    }
    config.update(overrides)
    return config


@pytest.fixture
def run_config_path(tmp_path: Path) -> Path:
    trial = benchgen.generate(ScenarioSpec(n=160, seed=5))
    trial.write(tmp_path / "data")
    path = tmp_path / "config.json"
    path.write_text(json.dumps(quick_run_config("data/trial.csv")), encoding="utf-8")
    return path


def report_for(ranking, vint_names, vint) -> ImportanceReport:
    """Importance report with a given ranking and interaction matrix"""
    return ImportanceReport(
        names=list(ranking), vimp=[0.0] * len(ranking), ranking=list(ranking), top_k=len(vint_names),
        vint_names=list(vint_names), vint=vint,
        forest=ForestSummary(n_trees=1, mtry=1, alpha=0.05, min_leaf=7, mean_leaves=1.0, root_only_fraction=1.0),
    )
