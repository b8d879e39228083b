import math

import numpy as np
import pytest

from app.core.errors import DataError
from app.schemas.plan import DisplayOptions
from app.services import displays
from tests.conftest import make_dataset, report_for


def test_group_effect_hand_values():
    ds = make_dataset([1.0, 2.0, 3.0, 0.0, 1.0, 2.0], [1, 1, 1, 0, 0, 0], g=["u"] * 6)
    (group,) = displays.group_effects(ds, np.zeros(6), "g")
    assert group.effect == pytest.approx(1.0)
    assert group.se == pytest.approx(math.sqrt(2.0 / 3.0))
    assert group.ci_low == pytest.approx(1.0 - 1.96 * math.sqrt(2.0 / 3.0))
    assert group.treated.n == 3 and group.control.n == 3


def test_group_with_single_arm_is_flagged():
    ds = make_dataset([1.0, 2.0, 3.0, 4.0], [1, 1, 0, 1], g=["u", "u", "v", "v"])
    groups = {tuple(g.labels): g for g in displays.group_effects(ds, np.arange(4.0), "g")}
    assert not groups[("u",)].effect_defined
    assert groups[("u",)].effect is None
    assert groups[("u",)].pseudo_mean == pytest.approx(0.5)
    assert groups[("v",)].effect_defined and groups[("v",)].se is None


def test_joint_groups_skip_empty_cells():
    ds = make_dataset([1.0, 2.0, 3.0, 4.0], [0, 1, 0, 1], g=["u", "u", "v", "v"], h=["p", "p", "q", "q"])
    labels = [g.labels for g in displays.group_effects(ds, np.zeros(4), "g", "h")]
    assert labels == [["u", "p"], ["v", "q"]]


def test_group_effects_reject_continuous():
    ds = make_dataset([1.0, 2.0], [0, 1], x=[0.5, 1.5])
    with pytest.raises(DataError):
        displays.group_effects(ds, np.zeros(2), "x")


def test_weighted_group_effect_matches_overall_when_balanced():
    y = [1.0, 3.0, 2.0, 6.0, 0.0, 1.0, 5.0, 2.0]
    a = [0, 1, 0, 1, 0, 1, 0, 1]
    ds = make_dataset(y, a, g=["u", "u", "u", "u", "v", "v", "v", "v"])
    groups = displays.group_effects(ds, np.zeros(8), "g")
    assert displays.weighted_group_effect(groups) == pytest.approx(displays.overall_effect(ds))


def test_spline_reproduces_line():
    x = np.linspace(-2.0, 3.0, 30)
    fit = displays.spline_fit(x, 2.0 * x + 1.0)
    grid = np.linspace(-2.0, 3.0, 7)
    assert np.asarray(fit.band(grid).fit) == pytest.approx(2.0 * grid + 1.0, abs=1e-8)


def test_spline_constant_is_flat():
    x = np.random.default_rng(1).uniform(size=20)
    band = displays.spline_fit(x, np.full(20, 4.0)).band(np.linspace(0.1, 0.9, 5))
    assert band.fit == pytest.approx([4.0] * 5, abs=1e-8)
    assert band.lower == pytest.approx(band.upper, abs=1e-8)


def test_spline_matches_normal_equations():
    rng = np.random.default_rng(2)
    x = rng.uniform(0.0, 10.0, 30)
    y = np.sin(x) + 0.1 * rng.normal(size=30)
    fit = displays.spline_fit(x, y, df=4)
    N = fit.basis(x)
    assert fit.coef == pytest.approx(np.linalg.solve(N.T @ N, N.T @ y), abs=1e-8)


def test_spline_natural_boundary_and_df():
    x = np.linspace(0.0, 1.0, 40)
    basis = displays.NaturalSplineBasis(x, df=4)
    assert basis.n_columns == 5
    assert basis.interior.size == 3


def test_spline_fit_is_affine_invariant():
    rng = np.random.default_rng(3)
    x = rng.normal(size=25)
    y = x ** 2 + rng.normal(size=25)
    fit = displays.spline_fit(x, y)
    moved = displays.spline_fit(3.0 * x - 1.0, y)
    assert moved.basis(3.0 * x - 1.0) @ moved.coef == pytest.approx(fit.basis(x) @ fit.coef, abs=1e-8)


def test_spline_needs_enough_points():
    with pytest.raises(ValueError, match="at least 6"):
        displays.spline_fit(np.arange(5.0), np.arange(5.0), df=4)


def test_local_regression_constant_and_linear():
    x = np.linspace(0.0, 1.0, 40)
    grid = np.linspace(0.1, 0.9, 9)
    assert displays.local_regression(x, np.full(40, 2.0), grid) == pytest.approx(np.full(9, 2.0))
    assert displays.local_regression(x, 3.0 * x, grid) == pytest.approx(3.0 * grid, abs=1e-6)


def test_local_regression_single_point_brute_force():
    rng = np.random.default_rng(4)
    x, phi = rng.uniform(size=20), rng.normal(size=20)
    x0, span = 0.4, 0.5
    k = 10
    d = np.abs(x - x0)
    h = np.sort(d)[k - 1]
    w = np.array([(1 - (di / h) ** 3) ** 3 if di < h else 0.0 for di in d])
    W = np.diag(w)
    design = np.column_stack([np.ones(20), x - x0])
    expected = np.linalg.solve(design.T @ W @ design, design.T @ W @ phi)[0]
    assert displays.local_regression(x, phi, [x0], span=span)[0] == pytest.approx(expected, abs=1e-10)


def test_local_regression_needs_ten_points():
    with pytest.raises(ValueError):
        displays.local_regression(np.arange(9.0), np.arange(9.0), [1.0])


def test_effect_curve_on_trial(small_trial):
    ds = small_trial.dataset
    curve = displays.effect_curve(ds, small_trial.tau, "X14", DisplayOptions(n_grid=12))
    assert len(curve.grid) == len(curve.effect.fit) == len(curve.pseudo_smooth) == 12
    assert curve.df == 4
    assert all(lo <= hi for lo, hi in zip(curve.effect.lower, curve.effect.upper))
    with pytest.raises(DataError):
        displays.effect_curve(ds, small_trial.tau, "X1")


def test_stratified_curves(small_trial):
    ds = small_trial.dataset
    by_level = displays.stratified_curves(ds, small_trial.tau, "X14", "X1", DisplayOptions(n_grid=5))
    assert [c.stratum for c in by_level] == ["X1 Y", "X1 N"]
    by_tertile = displays.stratified_curves(ds, small_trial.tau, "X14", "X17", DisplayOptions(n_grid=5))
    assert len(by_tertile) == 3
    assert all(c.stratum.startswith("X17 ") for c in by_tertile)


def test_top_pair_prefers_first_on_ties():
    report = report_for(["a", "b", "c"], ["a", "b", "c"], [[1.0, 0.5, 0.5], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0]])
    assert displays.top_pair(report) == ("a", "b")
    single = report_for(["a"], ["a"], [[1.0]])
    assert displays.top_pair(single) is None


def test_display_section_on_trial(small_trial):
    ds = small_trial.dataset
    report = report_for(["X1", "X14", "X2"], ["X1", "X14"], [[0.3, 0.2], [0.2, 0.1]])
    section = displays.display_section(ds, small_trial.tau, report, DisplayOptions(n_grid=5, n_covariates=2))
    assert [t.covariates for t in section.group_effects] == [["X1"]]
    assert [c.stratum for c in section.curves] == [None, "X1 Y", "X1 N"]
