"""
Initial data analysis.

Familiarization with the covariates only: summaries, missingness, dependency among
covariates. Nothing here relates covariates to the outcome or the treatment effect.
"""
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import leaves_list, linkage
from scipy.spatial.distance import squareform
from scipy.stats import chi2_contingency

from app.core.config import settings
from app.core.errors import DataError
from app.models.dataset import Column, Dataset
from app.models.enums import AssociationMethod
from app.schemas.ida import (
    AssociationMatrix,
    ColumnSummary,
    ContinuousSummary,
    Dendrogram,
    DendrogramMerge,
    IdaReport,
    IdaRoles,
    MissingnessReport,
    MissingPattern,
    StratifiedSummary,
    StratumSummary,
)
from app.services import tabular

logger = logging.getLogger(__name__)


def summarize_column(col: Column) -> ColumnSummary:
    observed = col.values[~col.missing]
    summary = ColumnSummary(
        name=col.name, kind=col.kind, count=int(observed.size), missing_count=col.n_missing
    )
    if col.is_categorical:
        summary.frequencies = {level: int(c) for level, c in zip(col.levels, col.level_counts())}
    elif observed.size:
        q1, median, q3 = np.percentile(observed, [25, 50, 75])
        summary.continuous = ContinuousSummary(
            mean=float(observed.mean()),
            sd=float(observed.std(ddof=1)) if observed.size > 1 else None,
            min=float(observed.min()),
            q1=float(q1),
            median=float(median),
            q3=float(q3),
            max=float(observed.max()),
        )
    return summary


def univariate_summary(ds: Dataset) -> list[ColumnSummary]:
    return [summarize_column(col) for col in ds.columns]


def stratified_summary(ds: Dataset, by: str) -> StratifiedSummary:
    """Univariate summaries within each level of a categorical column"""
    strat = ds.column(by)
    if not strat.is_categorical:
        raise DataError(f"cannot stratify by continuous column {by}")
    if strat.n_missing:
        logger.warning(f"{strat.n_missing} rows with missing {by} left out of the stratified summary")

    strata = []
    for k, level in enumerate(strat.levels):
        rows = np.flatnonzero(strat.values == k)
        if rows.size == 0:
            logger.warning(f"Stratum {by}={level} is empty, omitted")
            continue
        columns = [summarize_column(col.take(rows)) for col in ds.columns]
        strata.append(StratumSummary(level=level, n=int(rows.size), columns=columns))
    return StratifiedSummary(by=by, strata=strata)


def missingness_report(ds: Dataset) -> MissingnessReport:
    names = ds.names
    mask = np.column_stack([c.missing for c in ds.columns]) if ds.columns else np.zeros((0, 0), bool)
    n = max(ds.n_rows, 1)
    fractions = {name: float(mask[:, j].sum() / n) for j, name in enumerate(names)}

    patterns = []
    if ds.n_rows:
        rows, counts = np.unique(mask, axis=0, return_counts=True)
        for row, count in zip(rows, counts):
            patterns.append(MissingPattern(missing=[names[j] for j in np.flatnonzero(row)], count=int(count)))
    patterns.sort(key=lambda p: (-p.count, len(p.missing), p.missing))
    return MissingnessReport(fractions=fractions, patterns=patterns)


def _pearson(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx <= 0.0 or syy <= 0.0:
        return None
    return abs(float(xc @ yc)) / np.sqrt(sxx * syy)


def _eta(x: np.ndarray, codes: np.ndarray, n_levels: int) -> Optional[float]:
    counts = np.bincount(codes, minlength=n_levels)
    if np.count_nonzero(counts) < 2:
        return None
    total = float(((x - x.mean()) ** 2).sum())
    if total <= 0.0:
        return None
    means = np.bincount(codes, weights=x, minlength=n_levels)[counts > 0] / counts[counts > 0]
    between = float((counts[counts > 0] * (means - x.mean()) ** 2).sum())
    return np.sqrt(between / total)


def _cramers_v(a: np.ndarray, b: np.ndarray, la: int, lb: int) -> Optional[float]:
    table = np.zeros((la, lb))
    np.add.at(table, (a, b), 1.0)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    if min(table.shape) < 2:
        return None
    chi2 = chi2_contingency(table, correction=False)[0]
    return np.sqrt(chi2 / (table.sum() * (min(table.shape) - 1)))


def column_association(a: Column, b: Column) -> tuple[float, AssociationMethod]:
    """Absolute association over the rows where both columns are observed"""
    rows = ~(a.missing | b.missing)
    if a.is_categorical and b.is_categorical:
        method = AssociationMethod.CRAMERS_V
        value = _cramers_v(a.values[rows].astype(np.int64), b.values[rows].astype(np.int64),
                           len(a.levels), len(b.levels))
    elif a.is_categorical or b.is_categorical:
        method = AssociationMethod.ETA
        cat, cont = (a, b) if a.is_categorical else (b, a)
        value = _eta(cont.values[rows], cat.values[rows].astype(np.int64), len(cat.levels))
    else:
        method = AssociationMethod.PEARSON
        value = _pearson(a.values[rows], b.values[rows])

    if value is None:
        logger.warning(f"Zero variance in {a.name} or {b.name}, association set to 0")
        return 0.0, method
    return float(min(max(value, 0.0), 1.0)), method


def association(ds: Dataset, a: str, b: str) -> float:
    if a == b:
        return 1.0
    return column_association(ds.column(a), ds.column(b))[0]


def association_matrix(ds: Dataset, names: Optional[Sequence[str]] = None) -> AssociationMatrix:
    names = list(ds.covariates if names is None else names)
    columns = [ds.column(name) for name in names]
    p = len(names)
    values = np.eye(p)
    methods: list[list[Optional[AssociationMethod]]] = [[None] * p for _ in range(p)]
    for i in range(p):
        for j in range(i + 1, p):
            value, method = column_association(columns[i], columns[j])
            values[i, j] = values[j, i] = value
            methods[i][j] = methods[j][i] = method
    return AssociationMatrix(names=names, values=values.tolist(), methods=methods)


def cluster_covariates(m: AssociationMatrix) -> Dendrogram:
    """Average-linkage clustering on the distance 1 - association"""
    p = len(m.names)
    if p < 2:
        raise ValueError("clustering needs at least two covariates")
    distance = np.clip(1.0 - m.array(), 0.0, None)
    np.fill_diagonal(distance, 0.0)
    Z = linkage(squareform(distance, checks=False), method="average")

    members = {i: [name] for i, name in enumerate(m.names)}
    merges = []
    for step, (left, right, height, size) in enumerate(Z):
        left, right = int(left), int(right)
        members[p + step] = members[left] + members[right]
        merges.append(DendrogramMerge(
            left=left, right=right, height=float(height), size=int(size), members=members[p + step],
        ))
    order = [m.names[i] for i in leaves_list(Z)]
    return Dendrogram(names=list(m.names), merges=merges, order=order)


def noninformative_candidates(ds: Dataset, max_dominance: Optional[float] = None) -> list[str]:
    max_dominance = settings.DOMINANCE_MAX if max_dominance is None else max_dominance
    return tabular.noninformative(ds, max_dominance)


def ida_report(ds: Dataset, max_dominance: Optional[float] = None) -> IdaReport:
    """Assemble the IDA report on the raw (pre-imputation) dataset"""
    logger.info(f"Running initial data analysis on {ds.n_rows} rows")
    matrix = association_matrix(ds)
    dendrogram = cluster_covariates(matrix) if len(matrix.names) >= 2 else None
    return IdaReport(
        n_rows=ds.n_rows,
        roles=IdaRoles(
            outcome=ds.roles.outcome, treatment=ds.roles.treatment, covariates=list(ds.covariates)
        ),
        summaries=univariate_summary(ds),
        by_treatment=stratified_summary(ds, ds.roles.treatment),
        missingness=missingness_report(ds),
        noninformative=noninformative_candidates(ds, max_dominance),
        association=matrix,
        dendrogram=dendrogram,
    )
