"""
Descriptive effect displays: observed-data summaries of the outcome by arm and of the
pseudo-outcomes, for the covariates the importance ranking points at.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import null_space

from app.core.errors import DataError
from app.models.dataset import Dataset
from app.schemas.displays import ArmSummary, Band, EffectCurve, GroupEffect
from app.schemas.findings import DisplaySection, GroupEffectTable
from app.schemas.importance import ImportanceReport
from app.schemas.plan import DisplayOptions
from app.services import tabular
from app.services.cate import PseudoOutcomes

logger = logging.getLogger(__name__)

Z_95 = 1.96
MIN_SMOOTH_POINTS = 10


def _phi_of(po: Union[PseudoOutcomes, np.ndarray]) -> np.ndarray:
    return np.asarray(po.phi if isinstance(po, PseudoOutcomes) else po, dtype=float)


def _arm_summary(y: np.ndarray) -> ArmSummary:
    n = y.size
    if n == 0:
        return ArmSummary(n=0)
    mean = float(y.mean())
    if n < 2:
        return ArmSummary(n=1, mean=mean)
    half = Z_95 * float(y.std(ddof=1)) / math.sqrt(n)
    return ArmSummary(n=n, mean=mean, ci_low=mean - half, ci_high=mean + half)


def _group_effect(labels: list[str], y: np.ndarray, a: np.ndarray, phi: np.ndarray) -> GroupEffect:
    y0, y1 = y[a == 0], y[a == 1]
    effect = GroupEffect(
        labels=labels,
        n=int(y.size),
        control=_arm_summary(y0),
        treated=_arm_summary(y1),
        effect_defined=bool(y0.size and y1.size),
        pseudo_mean=float(phi.mean()) if phi.size else None,
    )
    if not effect.effect_defined:
        return effect
    effect.effect = float(y1.mean() - y0.mean())
    if y0.size >= 2 and y1.size >= 2:
        effect.se = math.sqrt(y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size)
        effect.ci_low = effect.effect - Z_95 * effect.se
        effect.ci_high = effect.effect + Z_95 * effect.se
    return effect


def group_effects(ds: Dataset, po: Union[PseudoOutcomes, np.ndarray], covariate: str,
                  second: Optional[str] = None) -> list[GroupEffect]:
    """Unadjusted treatment effect per level (or level pair); empty cells are omitted"""
    names = [covariate] if second is None else [covariate, second]
    columns = [ds.column(name) for name in names]
    for col in columns:
        if not col.is_categorical:
            raise DataError(f"group effects need a categorical covariate, {col.name} is continuous")
        if col.n_missing:
            raise DataError(f"covariate {col.name} has missing values")
    phi = _phi_of(po)
    y, a = ds.outcome, ds.treatment
    codes = [col.codes() for col in columns]

    groups = []
    for combo in itertools.product(*[range(len(col.levels)) for col in columns]):
        rows = np.ones(ds.n_rows, dtype=bool)
        for code, level in zip(codes, combo):
            rows &= code == level
        if not rows.any():
            continue
        labels = [col.levels[level] for col, level in zip(columns, combo)]
        group = _group_effect(labels, y[rows], a[rows], phi[rows])
        if not group.effect_defined:
            logger.warning(f"Group {labels} lacks an arm; effect undefined")
        groups.append(group)
    return groups


class NaturalSplineBasis:
    """
    Natural cubic spline basis, intercept included: cubic B-splines on boundary knots at
    the data range and interior knots at equispaced quantiles, restricted to the
    functions with zero second derivative at both boundaries.
    """

    def __init__(self, x: np.ndarray, df: int = 4):
        x = np.asarray(x, dtype=float)
        self.lower, self.upper = float(x.min()), float(x.max())
        if not self.upper > self.lower:
            raise ValueError("spline basis needs a covariate with spread")
        interior = np.quantile(x, np.linspace(0.0, 1.0, df + 1)[1:-1]) if df > 1 else np.empty(0)
        interior = np.unique(interior[(interior > self.lower) & (interior < self.upper)])
        self.interior = interior
        self.knots = np.concatenate([[self.lower] * 4, interior, [self.upper] * 4])
        n_basis = self.knots.size - 4
        second = np.array([
            [BSpline(self.knots, np.eye(n_basis)[i], 3).derivative(2)(edge) for i in range(n_basis)]
            for edge in (self.lower, self.upper)
        ])
        self.projection = null_space(second)

    @property
    def n_columns(self) -> int:
        return self.projection.shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.lower, self.upper)
        return BSpline.design_matrix(x, self.knots, 3).toarray() @ self.projection


@dataclass(frozen=True)
class SplineFit:
    basis: NaturalSplineBasis
    coef: np.ndarray
    cov: np.ndarray

    def band(self, grid: np.ndarray) -> Band:
        N = self.basis(grid)
        fit = N @ self.coef
        sd = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", N, self.cov, N), 0.0, None))
        return Band(fit=fit.tolist(), lower=(fit - Z_95 * sd).tolist(), upper=(fit + Z_95 * sd).tolist())


def spline_fit(x: np.ndarray, y: np.ndarray, df: int = 4, basis: Optional[NaturalSplineBasis] = None) -> SplineFit:
    """Least-squares natural-spline fit with homoscedastic coefficient covariance"""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < df + 2:
        raise ValueError(f"spline fit with df={df} needs at least {df + 2} points, got {x.size}")
    basis = basis or NaturalSplineBasis(x, df)
    N = basis(x)
    coef, _, rank, _ = np.linalg.lstsq(N, y, rcond=None)
    dof = max(x.size - rank, 1)
    sigma2 = float(np.sum((y - N @ coef) ** 2)) / dof
    cov = sigma2 * np.linalg.pinv(N.T @ N)
    return SplineFit(basis=basis, coef=coef, cov=cov)


def local_regression(x: np.ndarray, phi: np.ndarray, grid: np.ndarray, span: float = 0.75) -> np.ndarray:
    """Local linear fit at each grid point, tricube weights over the span-fraction nearest neighbours"""
    x, phi = np.asarray(x, dtype=float), np.asarray(phi, dtype=float)
    n = x.size
    if n < MIN_SMOOTH_POINTS:
        raise ValueError(f"local regression needs at least {MIN_SMOOTH_POINTS} points, got {n}")
    if not 0.0 < span <= 1.0:
        raise ValueError(f"span must lie in (0, 1], got {span}")
    k = min(n, max(3, math.ceil(span * n)))
    out = np.empty(len(grid))
    for g, x0 in enumerate(np.asarray(grid, dtype=float)):
        distance = np.abs(x - x0)
        h = np.partition(distance, k - 1)[k - 1]
        if h <= 0.0:
            out[g] = float(phi[distance == 0.0].mean())
            continue
        w = np.where(distance < h, (1.0 - (distance / h) ** 3) ** 3, 0.0)
        sw = np.sqrt(w)
        design = np.column_stack([np.ones(n), x - x0]) * sw[:, None]
        coef, _, rank, _ = np.linalg.lstsq(design, phi * sw, rcond=None)
        out[g] = coef[0] if rank == 2 else float(np.average(phi, weights=w))
    return out


def effect_curve(ds: Dataset, po: Union[PseudoOutcomes, np.ndarray], covariate: str,
                 options: Optional[DisplayOptions] = None, rows: Optional[np.ndarray] = None,
                 stratum: Optional[str] = None) -> EffectCurve:
    """Per-arm spline fits, their difference and a local-regression smooth of phi over the covariate"""
    options = options or DisplayOptions()
    col = ds.column(covariate)
    if col.is_categorical:
        raise DataError(f"effect curves need a continuous covariate, {covariate} is categorical")
    rows = np.ones(ds.n_rows, dtype=bool) if rows is None else rows
    x, y, a, phi = col.values[rows], ds.outcome[rows], ds.treatment[rows], _phi_of(po)[rows]

    grid = np.linspace(x.min(), x.max(), options.n_grid)
    basis = NaturalSplineBasis(x, options.df)
    control = spline_fit(x[a == 0], y[a == 0], options.df, basis)
    treated = spline_fit(x[a == 1], y[a == 1], options.df, basis)
    f0, f1 = control.band(grid), treated.band(grid)
    N = basis(grid)
    effect = np.asarray(f1.fit) - np.asarray(f0.fit)
    sd = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", N, control.cov + treated.cov, N), 0.0, None))
    return EffectCurve(
        covariate=covariate,
        grid=grid.tolist(),
        control=f0,
        treated=f1,
        effect=Band(fit=effect.tolist(), lower=(effect - Z_95 * sd).tolist(), upper=(effect + Z_95 * sd).tolist()),
        pseudo_smooth=local_regression(x, phi, grid, options.span).tolist(),
        df=basis.n_columns - 1,
        span=options.span,
        stratum=stratum,
    )


def tertile_cuts(values: np.ndarray) -> list[float]:
    return np.unique(np.quantile(values, [1.0 / 3.0, 2.0 / 3.0])).tolist()


def stratified_curves(ds: Dataset, po: Union[PseudoOutcomes, np.ndarray], covariate: str, by: str,
                      options: Optional[DisplayOptions] = None) -> list[EffectCurve]:
    """Effect curves of `covariate` within each level of `by` (tertiles when `by` is continuous)"""
    strata = ds.column(by)
    if not strata.is_categorical:
        ds = tabular.discretize(ds, by, tertile_cuts(strata.values), new_name=f"{by}_tertile")
        strata = ds.column(f"{by}_tertile")
    curves = []
    codes = strata.codes()
    for level, label in enumerate(strata.levels):
        rows = codes == level
        try:
            curves.append(effect_curve(ds, po, covariate, options, rows, stratum=f"{by} {label}"))
        except ValueError as e:
            logger.warning(f"Skipping stratum {by} {label} of {covariate}: {e}")
    return curves


def top_pair(report: ImportanceReport) -> Optional[tuple[str, str]]:
    """Covariate pair with the largest interaction importance"""
    names, vint = report.vint_names, np.asarray(report.vint, dtype=float)
    best = None
    # pairs follow the importance ranking, so ties go to the higher-ranked pair
    for i, j in itertools.combinations(range(len(names)), 2):
        if best is None or vint[i, j] > best[0]:
            best = (vint[i, j], names[i], names[j])
    return None if best is None else (best[1], best[2])


def display_section(ds: Dataset, po: Union[PseudoOutcomes, np.ndarray], report: ImportanceReport,
                    options: Optional[DisplayOptions] = None) -> DisplaySection:
    """Univariate displays for the top-ranked covariates and a bivariate display of the top pair"""
    options = options or DisplayOptions()
    section = DisplaySection()
    for name in report.ranking[:options.n_covariates]:
        try:
            if ds.column(name).is_categorical:
                section.group_effects.append(GroupEffectTable(covariates=[name], groups=group_effects(ds, po, name)))
            else:
                section.curves.append(effect_curve(ds, po, name, options))
        except ValueError as e:
            logger.warning(f"No display for {name}: {e}")

    pair = top_pair(report)
    if pair is not None:
        first, second = pair
        kinds = (ds.column(first).is_categorical, ds.column(second).is_categorical)
        if all(kinds):
            section.group_effects.append(
                GroupEffectTable(covariates=[first, second], groups=group_effects(ds, po, first, second))
            )
        else:
            x, by = (second, first) if kinds[0] else (first, second)
            section.curves.extend(stratified_curves(ds, po, x, by, options))
    logger.info(
        f"Built {len(section.group_effects)} group-effect tables and {len(section.curves)} effect curves"
    )
    return section


def overall_effect(ds: Dataset) -> float:
    y, a = ds.outcome, ds.treatment
    return float(y[a == 1].mean() - y[a == 0].mean())


def weighted_group_effect(groups: Sequence[GroupEffect]) -> float:
    """Average of per-group effects weighted by harmonic-mean arm sizes"""
    defined = [g for g in groups if g.effect_defined]
    weights = np.array([2.0 / (1.0 / g.control.n + 1.0 / g.treated.n) for g in defined])
    return float(np.average([g.effect for g in defined], weights=weights))
