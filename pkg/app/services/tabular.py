"""
CSV ingestion and analysis-dataset creation.

Every step here looks at baseline covariates only. The outcome and the treatment are
bound and validated, never used to fill in or reshape covariates.
"""
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import DataError
from app.models.dataset import TREATMENT_LEVELS, Column, Dataset, FeatureMatrix, Roles
from app.models.enums import ColumnKind
from app.schemas.plan import AnalysisPlan

logger = logging.getLogger(__name__)

OTHER_LEVEL = "OTHER"
MISSING_TOKENS = ["", "NA"]


def _is_numeric(series: pd.Series) -> tuple[bool, np.ndarray]:
    observed = series.notna()
    parsed = pd.to_numeric(series, errors="coerce").to_numpy(dtype=float)
    if not np.all(~np.isnan(parsed[observed.to_numpy()])):
        return False, parsed
    # parsed like float(), so values written with %.17g load back exactly
    return True, series.astype(float).to_numpy()


def _infer_column(name: str, series: pd.Series) -> Column:
    numeric, numbers = _is_numeric(series)
    if numeric:
        observed = numbers[~np.isnan(numbers)]
        if np.any(~np.isfinite(observed)):
            raise DataError(f"column {name} has non-finite values")
        return Column.continuous(name, numbers)
    labels = [None if pd.isna(v) else str(v) for v in series]
    return Column.categorical(name, labels)


def _treatment_column(name: str, series: pd.Series, treated_level: Optional[str]) -> Column:
    if series.isna().any():
        raise DataError(f"treatment {name} has missing values")
    labels = series.astype(str).tolist()
    distinct = list(dict.fromkeys(labels))
    numeric, numbers = _is_numeric(series)
    distinct_values = sorted(set(numbers.tolist())) if numeric else []
    if len(distinct_values if numeric else distinct) != 2:
        raise DataError(f"treatment not binary: column {name} has values {distinct}")

    if numeric:
        if treated_level is None:
            if distinct_values != [0.0, 1.0]:
                raise DataError(
                    f"treatment {name} is not coded 0/1 ({distinct}); set plan.treated_level"
                )
            treated = numbers == 1.0
        else:
            try:
                target = float(treated_level)
            except ValueError:
                raise DataError(f"treated_level {treated_level} is not a value of {name}") from None
            if target not in distinct_values:
                raise DataError(f"treated_level {treated_level} is not a value of {name}")
            treated = numbers == target
    else:
        if treated_level is None:
            raise DataError(
                f"treatment {name} is not coded 0/1 ({distinct}); set plan.treated_level"
            )
        if treated_level not in distinct:
            raise DataError(f"treated_level {treated_level} is not a value of {name}")
        treated = np.array([v == treated_level for v in labels])

    codes = np.where(treated, "1", "0").tolist()
    return Column.categorical(name, codes, levels=TREATMENT_LEVELS)


def load_csv(path: Union[str, Path], plan: AnalysisPlan) -> Dataset:
    """Read a trial CSV and bind the plan's roles"""
    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, na_values=MISSING_TOKENS, skipinitialspace=False
        )
    except FileNotFoundError as e:
        raise DataError(f"data file not found: {path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"could not parse {path}: {e}") from e

    header = [str(c) for c in frame.columns]
    for name in (plan.outcome, plan.treatment, *plan.covariate_names):
        if name not in header:
            raise DataError(f"missing role column {name} in {path}")

    outcome = _infer_column(plan.outcome, frame[plan.outcome])
    if outcome.is_categorical:
        raise DataError(f"outcome {plan.outcome} must be numeric")
    if outcome.n_missing:
        raise DataError(f"outcome {plan.outcome} has {outcome.n_missing} missing values")

    treatment = _treatment_column(plan.treatment, frame[plan.treatment], plan.treated_level)
    covariates = [_infer_column(name, frame[name]) for name in plan.covariate_names]

    ds = Dataset(
        columns=(outcome, treatment, *covariates),
        roles=Roles(plan.outcome, plan.treatment, tuple(plan.covariate_names)),
    )
    logger.info(f"Loaded {ds.n_rows} rows with {len(covariates)} covariates from {path}")
    return ds


def impute_baseline(ds: Dataset, missing_indicators: bool = False) -> Dataset:
    """
    Single imputation of covariates: pooled median for continuous columns, pooled mode
    (first level on ties) for categorical ones.

    With missing_indicators, a `<name>_missing` 0/1 covariate is added for every covariate
    that had a missing cell.
    """
    imputed, indicators = [], []
    for col in ds.covariate_columns():
        if not col.n_missing:
            continue
        if col.n_missing == col.n:
            raise DataError(f"covariate {col.name} is entirely missing")
        if missing_indicators:
            flags = np.where(col.missing, "1", "0").tolist()
            indicators.append(Column.categorical(f"{col.name}_missing", flags, levels=TREATMENT_LEVELS))

        values = col.values.copy()
        if col.is_categorical:
            fill = float(np.argmax(col.level_counts()))
        else:
            fill = float(np.median(col.values[~col.missing]))
        values[col.missing] = fill
        imputed.append(col.replace(values=values))
        logger.debug(f"Imputed {col.n_missing} cells of {col.name}")

    if not imputed:
        return ds
    covariates = list(ds.covariates) + [c.name for c in indicators if c.name not in ds]
    return ds.with_columns(imputed + indicators, covariates=covariates)


def sparse_levels(ds: Dataset, min_frac: float) -> dict[str, list[str]]:
    """Levels of each categorical covariate that merging would fold into OTHER"""
    if not 0.0 < min_frac < 0.5:
        raise ValueError(f"min_frac must lie in (0, 0.5), got {min_frac}")
    threshold = min_frac * ds.n_rows
    result = {}
    for col in ds.covariate_columns():
        if not col.is_categorical:
            continue
        counts = col.level_counts()
        sparse = [level for level, count in zip(col.levels, counts) if count < threshold]
        if sparse and sparse != [OTHER_LEVEL]:
            result[col.name] = sparse
    return result


def merge_sparse_levels(ds: Dataset, min_frac: Optional[float] = None) -> Dataset:
    """Merge categorical levels rarer than min_frac * n into the level OTHER"""
    min_frac = settings.SPARSE_LEVEL_MIN_FRAC if min_frac is None else min_frac
    merged = []
    for name, sparse in sparse_levels(ds, min_frac).items():
        col = ds.column(name)
        folded = set(sparse) | {OTHER_LEVEL}
        levels = [level for level in col.levels if level not in folded] + [OTHER_LEVEL]
        labels = [None if v is None else (OTHER_LEVEL if v in folded else v) for v in col.labels()]
        merged.append(Column.categorical(name, labels, levels=levels))
        logger.info(f"Merged sparse levels {sparse} of {name} into {OTHER_LEVEL}")
    if not merged:
        return ds
    return ds.with_columns(merged)


def dominance(col: Column) -> float:
    """Share of observed cells taken by the most frequent level or value"""
    observed = col.values[~col.missing]
    if observed.size == 0:
        return 1.0
    _, counts = np.unique(observed, return_counts=True)
    return float(counts.max() / observed.size)


def noninformative(ds: Dataset, max_dominance: float) -> list[str]:
    return [c.name for c in ds.covariate_columns() if dominance(c) > max_dominance]


def drop_noninformative(ds: Dataset, max_dominance: Optional[float] = None) -> tuple[Dataset, list[str]]:
    """Drop covariates concentrated on essentially one level or value"""
    max_dominance = settings.DOMINANCE_MAX if max_dominance is None else max_dominance
    dropped = noninformative(ds, max_dominance)
    if not dropped:
        return ds, []
    logger.warning(f"Dropping non-informative covariates {dropped} (dominance > {max_dominance})")
    return ds.drop(dropped), dropped


def feature_matrix(ds: Dataset, covariate_subset: Optional[Sequence[str]] = None) -> FeatureMatrix:
    return FeatureMatrix.from_dataset(ds, covariate_subset)


def one_hot(ds: Dataset, covariate_subset: Optional[Sequence[str]] = None) -> tuple[np.ndarray, list[str]]:
    """Design matrix for linear learners, first level of each factor as reference"""
    return feature_matrix(ds, covariate_subset).one_hot()


def _cut_labels(cuts: Sequence[float]) -> list[str]:
    labels = [f"<= {cuts[0]:.4g}"]
    labels += [f"({a:.4g}, {b:.4g}]" for a, b in zip(cuts[:-1], cuts[1:])]
    labels.append(f"> {cuts[-1]:.4g}")
    return labels


def discretize(ds: Dataset, name: str, cuts: Sequence[float], new_name: Optional[str] = None) -> Dataset:
    """Add a categorical copy of a continuous column cut at `cuts` (right-closed intervals)"""
    col = ds.column(name)
    if col.is_categorical:
        raise DataError(f"column {name} is already categorical")
    cuts = sorted(float(c) for c in cuts)
    if not cuts or len(set(cuts)) != len(cuts):
        raise ValueError("cuts must be a non-empty list of distinct values")
    codes = np.searchsorted(np.asarray(cuts), col.values, side="left").astype(float)
    codes[col.missing] = np.nan
    cut = Column(
        name=new_name or f"{name}_cut",
        kind=ColumnKind.CATEGORICAL,
        values=codes,
        levels=tuple(_cut_labels(cuts)),
    )
    return ds.with_columns([cut])

