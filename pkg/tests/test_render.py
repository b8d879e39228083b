import numpy as np

from app.models.enums import FigureKind
from app.schemas.displays import FigureData
from app.schemas.findings import GroupEffectTable
from app.schemas.importance import PartialDependenceCurve
from app.services import displays, ida, render
from tests.conftest import make_dataset, report_for


def sample_table() -> GroupEffectTable:
    ds = make_dataset([1.0, 2.0, 3.0, 0.0, 1.0, 2.0, 4.0, 1.0], [1, 1, 1, 0, 0, 0, 1, 0],
                      g=["u", "u", "u", "u", "u", "u", "v", "v"])
    return GroupEffectTable(covariates=["g"], groups=displays.group_effects(ds, np.arange(8.0), "g"))


def test_render_is_byte_identical(tmp_path):
    data = render.group_effect_figure(sample_table(), "groups_g")
    render.render_figure(data, tmp_path / "first")
    render.render_figure(data, tmp_path / "second")
    first = (tmp_path / "first" / "groups_g.svg").read_bytes()
    assert first == (tmp_path / "second" / "groups_g.svg").read_bytes()
    assert first.startswith(b"<?xml")


def test_empty_group_list_gets_placeholder(tmp_path):
    data = render.group_effect_figure(GroupEffectTable(covariates=["g"], groups=[]), "groups_empty")
    assert data.is_empty and data.annotations == ["no data"]
    entry = render.render_figure(data, tmp_path)
    assert "no data" in (tmp_path / entry.svg).read_text()


def test_plot_data_json_reads_back(tmp_path):
    data = render.group_effect_figure(sample_table(), "groups_g")
    entry = render.render_figure(data, tmp_path)
    assert FigureData.model_validate_json((tmp_path / entry.data).read_text()) == data
    assert entry.kind == FigureKind.INTERVALS


def test_group_figure_carries_exact_numbers():
    data = render.group_effect_figure(sample_table(), "groups_g")
    effect = next(s for s in data.series if s.name == "effect")
    assert data.x_ticks == ["u", "v"]
    assert effect.y[0] == 1.0
    assert any("stars" == s.style for s in data.series)


def test_ida_figures(random_dataset, tmp_path):
    figures = render.ida_figures(random_dataset, ida.ida_report(random_dataset))
    ids = [f.figure_id for f in figures]
    assert ids == ["ida_distribution_x1", "ida_distribution_x2", "ida_distribution_g",
                   "ida_missingness", "ida_association", "ida_dendrogram"]
    assert sorted(figures[2].x_ticks) == ["a", "b", "c"]
    manifest = render.render_all(figures, tmp_path)
    assert len(manifest.figures) == 6
    assert (tmp_path / "ida_dendrogram.svg").exists()


def test_findings_figures_follow_ranking(small_trial):
    report = report_for(["X14", "X1"], ["X14", "X1"], [[0.4, 0.1], [0.1, 0.2]])
    report.vimp = [0.4, 0.2]
    curve = displays.effect_curve(small_trial.dataset, small_trial.tau, "X14")
    figures = render.findings_figures(report, [], [curve])
    assert [f.figure_id for f in figures] == ["importance_vimp", "importance_vint", "importance_bootstrap",
                                              "curve_X14"]
    assert figures[0].x_ticks == ["X14", "X1"]
    assert figures[0].series[0].y == [0.4, 0.2]
    assert figures[2].is_empty


def test_pd_figure_follows_covariate_type():
    # a numeric grid whose labels happen to differ from the default formatting
    numeric = PartialDependenceCurve(covariate="X14", grid=[0.1, 0.25], labels=["0.100", "0.250"], values=[0.0, 0.5])
    figure = render.pd_figure(numeric, "pd_X14")
    assert figure.x_ticks is None
    assert figure.series[0].style == "line"

    levels = PartialDependenceCurve(covariate="X1", grid=[0.0, 1.0], labels=["N", "Y"], values=[0.6, -0.1],
                                    categorical=True)
    figure = render.pd_figure(levels, "pd_X1")
    assert figure.x_ticks == ["N", "Y"]
    assert figure.series[0].style == "points"
