"""
Figure data and deterministic SVG rendering.

Every figure is described by a FigureData (the exact numbers, written as JSON next to
the SVG) and drawn from that description alone, so the two can never disagree.
"""
import logging
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.ticker import FuncFormatter  # noqa: E402
from scipy.cluster.hierarchy import dendrogram  # noqa: E402

from app.core.config import settings  # noqa: E402
from app.models.dataset import Dataset  # noqa: E402
from app.models.enums import FigureKind  # noqa: E402
from app.schemas.displays import EffectCurve, FigureData, FigureEntry, FigureManifest, FigureSeries  # noqa: E402
from app.schemas.findings import GroupEffectTable  # noqa: E402
from app.schemas.ida import IdaReport  # noqa: E402
from app.schemas.importance import ImportanceReport, PartialDependenceCurve  # noqa: E402

logger = logging.getLogger(__name__)

FIGURE_SIZE = (6.4, 4.8)
HISTOGRAM_BINS = 20
BAND_FOOTNOTE = "Pointwise 95% bands from a homoscedastic linear-model variance."


def _fmt(value: float, _=None) -> str:
    return f"{value:.4g}"


def group_effect_figure(table: GroupEffectTable, figure_id: str) -> FigureData:
    groups = table.groups
    x = [float(i) for i in range(len(groups))]
    data = FigureData(
        figure_id=figure_id,
        kind=FigureKind.INTERVALS,
        title=f"Treatment effect by {' x '.join(table.covariates)}",
        x_label=" x ".join(table.covariates),
        y_label="Outcome difference (treated - control)",
        x_ticks=[" / ".join(g.labels) for g in groups],
    )
    if not groups:
        data.annotations.append("no data")
        return data
    data.series = [
        FigureSeries(name="effect", x=x, y=[g.effect for g in groups],
                     lower=[g.ci_low for g in groups], upper=[g.ci_high for g in groups], style="points"),
        FigureSeries(name="pseudo-outcome mean", x=x, y=[g.pseudo_mean for g in groups], style="stars"),
        FigureSeries(name="control mean", x=x, y=[g.control.mean for g in groups],
                     lower=[g.control.ci_low for g in groups], upper=[g.control.ci_high for g in groups],
                     style="points"),
        FigureSeries(name="treated mean", x=x, y=[g.treated.mean for g in groups],
                     lower=[g.treated.ci_low for g in groups], upper=[g.treated.ci_high for g in groups],
                     style="points"),
    ]
    undefined = [" / ".join(g.labels) for g in groups if not g.effect_defined]
    if undefined:
        data.annotations.append(f"effect undefined (single arm): {', '.join(undefined)}")
    return data


def curve_figure(curve: EffectCurve, figure_id: str) -> FigureData:
    title = f"Outcome and effect over {curve.covariate}"
    if curve.stratum:
        title += f" ({curve.stratum})"
    return FigureData(
        figure_id=figure_id,
        kind=FigureKind.CURVES,
        title=title,
        x_label=curve.covariate,
        y_label="Outcome / effect",
        series=[
            FigureSeries(name=name, x=curve.grid, y=band.fit, lower=band.lower, upper=band.upper)
            for name, band in (("control", curve.control), ("treated", curve.treated), ("effect", curve.effect))
        ] + [FigureSeries(name="pseudo-outcome smooth", x=curve.grid, y=curve.pseudo_smooth, style="dashed")],
        annotations=[f"natural spline df={curve.df}, local regression span={curve.span}", BAND_FOOTNOTE],
    )


def vimp_figure(report: ImportanceReport, figure_id: str = "importance_vimp") -> FigureData:
    order = report.ranking
    values = dict(zip(report.names, report.vimp))
    return FigureData(
        figure_id=figure_id,
        kind=FigureKind.BARS,
        title="Permutation importance",
        y_label="Increase in OOB squared error",
        x_ticks=order,
        series=[FigureSeries(name="vimp", x=[float(i) for i in range(len(order))], y=[values[n] for n in order],
                             style="bars")],
    )


def vint_figure(report: ImportanceReport, figure_id: str = "importance_vint") -> FigureData:
    return FigureData(
        figure_id=figure_id,
        kind=FigureKind.HEATMAP,
        title="Importance (diagonal) and pairwise interaction importance",
        matrix=report.vint if report.vint_names else None,
        row_labels=report.vint_names,
        col_labels=report.vint_names,
    )


def bootstrap_figure(report: ImportanceReport, figure_id: str = "importance_bootstrap") -> FigureData:
    boxes = {box.name: box for box in report.bootstrap_boxes}
    order = [name for name in report.ranking if name in boxes]
    x = [float(i) for i in range(len(order))]
    data = FigureData(figure_id=figure_id, kind=FigureKind.BOXES, title="Bootstrap permutation importance",
                      y_label="Increase in OOB squared error", x_ticks=order)
    if order:
        data.series = [
            FigureSeries(name="quartiles", x=x, y=[boxes[n].median for n in order],
                         lower=[boxes[n].q1 for n in order], upper=[boxes[n].q3 for n in order], style="boxes"),
            FigureSeries(name="range", x=x, y=[boxes[n].median for n in order],
                         lower=[boxes[n].min for n in order], upper=[boxes[n].max for n in order], style="whiskers"),
        ]
        if report.stability is not None:
            data.annotations.append(f"selection stability {_fmt(report.stability)}")
        else:
            data.annotations.append("selection stability undefined")
    return data


def pd_figure(curve: PartialDependenceCurve, figure_id: str) -> FigureData:
    return FigureData(
        figure_id=figure_id,
        kind=FigureKind.CURVES,
        title=f"Partial dependence of the forest on {curve.covariate}",
        x_label=curve.covariate,
        y_label="Predicted pseudo-outcome",
        x_ticks=curve.labels if curve.categorical else None,
        series=[FigureSeries(name="partial dependence", x=curve.grid, y=curve.values,
                             style="points" if curve.categorical else "line")],
    )


def ida_figures(ds: Dataset, report: IdaReport) -> list[FigureData]:
    """Distribution of every covariate, missingness, association heatmap and dendrogram"""
    figures = []
    for name in report.roles.covariates:
        col = ds.column(name)
        observed = col.values[~col.missing]
        if col.is_categorical:
            counts = np.bincount(observed.astype(np.int64), minlength=len(col.levels))
            ticks, x, y = list(col.levels), list(range(len(col.levels))), counts.tolist()
        elif observed.size:
            counts, edges = np.histogram(observed, bins=HISTOGRAM_BINS)
            ticks, x, y = None, (0.5 * (edges[:-1] + edges[1:])).tolist(), counts.tolist()
        else:
            ticks, x, y = None, [], []
        figures.append(FigureData(
            figure_id=f"ida_distribution_{name}", kind=FigureKind.BARS, title=f"Distribution of {name}",
            x_label=name, y_label="Count", x_ticks=ticks,
            series=[FigureSeries(name="count", x=[float(v) for v in x], y=[float(v) for v in y], style="bars")]
            if x else [],
        ))

    fractions = report.missingness.fractions
    names = list(fractions)
    figures.append(FigureData(
        figure_id="ida_missingness", kind=FigureKind.BARS, title="Fraction of missing values",
        y_label="Missing fraction", x_ticks=names,
        series=[FigureSeries(name="missing", x=[float(i) for i in range(len(names))],
                             y=[fractions[n] for n in names], style="bars")] if names else [],
    ))
    figures.append(FigureData(
        figure_id="ida_association", kind=FigureKind.HEATMAP, title="Pairwise covariate association",
        matrix=report.association.values or None, row_labels=report.association.names,
        col_labels=report.association.names,
    ))
    if report.dendrogram is not None:
        figures.append(FigureData(
            figure_id="ida_dendrogram", kind=FigureKind.DENDROGRAM,
            title="Covariate clustering (1 - association)",
            matrix=[[float(m.left), float(m.right), m.height, float(m.size)] for m in report.dendrogram.merges],
            row_labels=report.dendrogram.names,
        ))
    return figures


def _draw_series(ax, series: FigureSeries) -> None:
    x = np.asarray(series.x, dtype=float)
    y = np.array([np.nan if v is None else v for v in series.y], dtype=float)
    if series.style == "bars":
        ax.bar(x, np.nan_to_num(y), label=series.name)
        return
    if series.style == "stars":
        ax.plot(x, y, linestyle="none", marker="*", markersize=10, label=series.name)
        return
    lower = upper = None
    if series.lower is not None and series.upper is not None:
        lower = np.array([np.nan if v is None else v for v in series.lower], dtype=float)
        upper = np.array([np.nan if v is None else v for v in series.upper], dtype=float)
    if series.style in ("points", "boxes", "whiskers"):
        marker = {"points": "o", "boxes": "s", "whiskers": "none"}[series.style]
        err = None if lower is None else np.vstack([y - lower, upper - y])
        ax.errorbar(x, y, yerr=err, linestyle="none", marker=marker, capsize=3, label=series.name)
        return
    line, = ax.plot(x, y, linestyle="--" if series.style == "dashed" else "-", label=series.name)
    if lower is not None:
        ax.fill_between(x, lower, upper, alpha=0.2, color=line.get_color(), linewidth=0)


def _draw(data: FigureData):
    fig, ax = plt.subplots(figsize=FIGURE_SIZE)
    ax.set_title(data.title)
    if data.is_empty:
        ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
        ax.set_axis_off()
        return fig
    if data.kind == FigureKind.HEATMAP:
        matrix = np.asarray(data.matrix, dtype=float)
        image = ax.imshow(matrix, cmap="viridis")
        ax.set_xticks(range(len(data.col_labels or [])), data.col_labels or [], rotation=90)
        ax.set_yticks(range(len(data.row_labels or [])), data.row_labels or [])
        fig.colorbar(image, ax=ax, format=FuncFormatter(_fmt))
    elif data.kind == FigureKind.DENDROGRAM:
        dendrogram(np.asarray(data.matrix, dtype=float), labels=data.row_labels, ax=ax, leaf_rotation=90)
        ax.yaxis.set_major_formatter(FuncFormatter(_fmt))
    else:
        for series in data.series:
            _draw_series(ax, series)
        if data.x_ticks is not None:
            ax.set_xticks(range(len(data.x_ticks)), data.x_ticks, rotation=45, ha="right")
        else:
            ax.xaxis.set_major_formatter(FuncFormatter(_fmt))
        ax.yaxis.set_major_formatter(FuncFormatter(_fmt))
        if len(data.series) > 1:
            ax.legend(loc="best", fontsize="small")
    ax.set_xlabel(data.x_label)
    ax.set_ylabel(data.y_label)
    if data.annotations:
        fig.text(0.01, 0.01, "; ".join(data.annotations), fontsize="x-small")
    fig.tight_layout()
    return fig


def render_figure(data: FigureData, out_dir: Union[str, Path]) -> FigureEntry:
    """Write <figure_id>.svg and <figure_id>.json into out_dir"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    svg_path, json_path = out_dir / f"{data.figure_id}.svg", out_dir / f"{data.figure_id}.json"
    with matplotlib.rc_context({"svg.hashsalt": settings.FIGURE_HASH_SALT, "svg.fonttype": "none"}):
        fig = _draw(data)
        try:
            fig.savefig(svg_path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    json_path.write_text(data.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.debug(f"Rendered figure {data.figure_id}")
    return FigureEntry(figure_id=data.figure_id, kind=data.kind, title=data.title,
                       svg=svg_path.name, data=json_path.name)


def render_all(figures: Sequence[FigureData], out_dir: Union[str, Path]) -> FigureManifest:
    manifest = FigureManifest(figures=[render_figure(data, out_dir) for data in figures])
    logger.info(f"Rendered {len(manifest.figures)} figures into {out_dir}")
    return manifest


def findings_figures(importance: ImportanceReport, group_tables: Sequence[GroupEffectTable],
                     curves: Sequence[EffectCurve]) -> list[FigureData]:
    """Importance, bootstrap, partial-dependence and effect-display figures, in report order"""
    figures = [vimp_figure(importance), vint_figure(importance), bootstrap_figure(importance)]
    figures += [pd_figure(curve, f"pd_{curve.covariate}") for curve in importance.partial_dependence]
    figures += [
        group_effect_figure(table, f"groups_{'_'.join(table.covariates)}") for table in group_tables
    ]
    figures += [curve_figure(curve, _curve_id(curve, i)) for i, curve in enumerate(curves)]
    return figures


def _curve_id(curve: EffectCurve, index: int) -> str:
    return f"curve_{curve.covariate}" if curve.stratum is None else f"curve_{curve.covariate}_stratum{index}"
