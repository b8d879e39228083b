import math

import numpy as np
import pytest

from app.models.dataset import Column
from app.models.enums import VerbalCategory
from app.schemas.plan import LearnerConfig
from app.schemas.scenario import Homogeneous, ScenarioSpec
from app.services import benchgen, cate, hettest
from tests.conftest import make_dataset


def brute_force_statistic(x: np.ndarray, phi: np.ndarray) -> float:
    n = x.size
    t = float(np.sum(x * phi))
    expectation = n * x.mean() * phi.mean()
    variance = np.sum((x - x.mean()) ** 2) * np.sum((phi - phi.mean()) ** 2) / (n - 1)
    return abs(t - expectation) / math.sqrt(variance)


def test_constant_phi_gives_zero_statistic(random_dataset):
    phi = np.full(random_dataset.n_rows, 1.5)
    for name in random_dataset.covariates:
        assert hettest.linear_statistic(random_dataset.column(name), phi) == 0.0
    result = hettest.global_test(random_dataset, phi, 99, seed=1)
    assert result.statistic == 0.0
    assert result.p_value == 1.0


def test_binary_covariate_matches_variance_formula():
    x = np.tile([0.0, 1.0], 50)
    phi = x.copy()
    expected = brute_force_statistic(x, phi)
    assert hettest.linear_statistic(Column.continuous("x", x), phi) == pytest.approx(expected)
    categorical = Column.categorical("g", ["a", "b"] * 50)
    assert hettest.linear_statistic(categorical, phi) == pytest.approx(expected)


def test_continuous_matches_variance_formula():
    rng = np.random.default_rng(6)
    x, phi = rng.normal(size=50), rng.normal(size=50)
    assert hettest.linear_statistic(Column.continuous("x", x), phi) == pytest.approx(brute_force_statistic(x, phi))


def test_zero_variance_covariate():
    phi = np.random.default_rng(0).normal(size=10)
    assert hettest.linear_statistic(Column.continuous("x", np.ones(10)), phi) == 0.0
    assert hettest.linear_statistic(Column.categorical("g", ["a"] * 10), phi) == 0.0


def test_perfect_dependence_reaches_minimal_p():
    rng = np.random.default_rng(7)
    n = 200
    x = rng.normal(size=n)
    ds = make_dataset(rng.normal(size=n), np.arange(n) % 2, x=x, z=rng.normal(size=n))
    result = hettest.global_test(ds, x, 999, seed=3)
    assert result.p_value == pytest.approx(1.0 / 1000.0)
    assert result.verbal == VerbalCategory.STRONG
    assert result.per_covariate[0].name == "x"


def test_p_value_rules(random_dataset):
    phi = np.random.default_rng(8).normal(size=random_dataset.n_rows)
    result = hettest.global_test(random_dataset, phi, 199, seed=5)
    assert 0.0 < result.p_value <= 1.0
    assert (result.p_value * 200) == pytest.approx(round(result.p_value * 200))
    assert result.surprise == pytest.approx(-math.log2(result.p_value))
    assert all(c.adjusted_p >= result.p_value for c in result.per_covariate)
    again = hettest.global_test(random_dataset, phi, 199, seed=5)
    assert again.p_value == result.p_value


def test_p_value_invariant_to_affine_transform(random_dataset):
    phi = random_dataset.column("x1").values + np.random.default_rng(9).normal(size=random_dataset.n_rows)
    base = hettest.global_test(random_dataset, phi, 199, seed=2)
    x2 = random_dataset.column("x2")
    moved = random_dataset.with_columns([x2.replace(values=-4.0 * x2.values + 10.0)])
    assert hettest.global_test(moved, phi, 199, seed=2).p_value == base.p_value


def test_pseudo_outcomes_must_align(random_dataset):
    with pytest.raises(ValueError, match="aligned"):
        hettest.global_test(random_dataset, np.zeros(3), 99, seed=0)


@pytest.mark.parametrize("p, surprise, category", [
    (1.0, 0.0, VerbalCategory.LOW),
    (0.25, 2.0, VerbalCategory.LOW),
    (0.084, 3.57, VerbalCategory.MODERATE),
    (0.063, 3.99, VerbalCategory.MODERATE),
    (0.008, 6.97, VerbalCategory.NOTEWORTHY),
    (0.001, 9.97, VerbalCategory.STRONG),
    (0.0005, 10.97, VerbalCategory.VERY_STRONG),
])
def test_verbal_scale(p, surprise, category):
    assert hettest.surprise(p) == pytest.approx(surprise, abs=0.01)
    assert hettest.verbal_category(p) == category


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
def test_invalid_p_rejected(p):
    with pytest.raises(ValueError):
        hettest.verbal_category(p)
    with pytest.raises(ValueError):
        hettest.surprise(p)


@pytest.mark.slow
def test_calibrated_under_constant_effect():
    rejections = 0
    replicates = 200
    for r in range(replicates):
        trial = benchgen.generate(ScenarioSpec(n=200, seed=1000 + r, effect=Homogeneous(tau0=0.2)))
        ds = trial.dataset
        po = cate.pseudo_outcomes(ds, cate.assign_folds(ds, 2, r), LearnerConfig(), override=trial.oracle())
        rejections += hettest.global_test(ds, po, 199, seed=r).p_value <= 0.05
    assert 0.02 <= rejections / replicates <= 0.10
