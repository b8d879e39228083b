"""
Global test of treatment-effect homogeneity.

Each covariate is related to the pseudo-outcome through the standardized linear
statistic of the conditional-inference framework; the maximum over covariates is
calibrated by permuting the pseudo-outcome against the intact covariate rows.
"""
import logging
import math
from typing import Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed

from app.core.config import settings
from app.core.rng import stream
from app.models.dataset import Column, Dataset
from app.models.enums import VerbalCategory
from app.schemas.hettest import CovariateStatistic, HetTestResult, VerbalEvidence
from app.services.cate import PseudoOutcomes

logger = logging.getLogger(__name__)

PERMUTATION_BLOCK = 512

# smallest p-value of each category
VERBAL_SCALE = [
    (0.25, VerbalCategory.LOW),
    (0.063, VerbalCategory.MODERATE),
    (0.008, VerbalCategory.NOTEWORTHY),
    (0.001, VerbalCategory.STRONG),
]


def score_columns(col: Column) -> np.ndarray:
    """
    Centered unit-norm scores (n x m): one column for a continuous covariate, one per
    non-degenerate level for a categorical one. Empty when the covariate has no variance.
    """
    if col.n_missing:
        raise ValueError(f"covariate {col.name} has missing values")
    n = col.n
    if col.is_categorical:
        codes = col.codes()
        scores = []
        for level in range(len(col.levels)):
            indicator = (codes == level).astype(float)
            n_l = indicator.sum()
            if 0 < n_l < n:
                centered = indicator - n_l / n
                scores.append(centered / math.sqrt(n_l * (n - n_l) / n))
        return np.column_stack(scores) if scores else np.empty((n, 0))
    centered = col.values - col.values.mean()
    norm = float(np.sqrt(centered @ centered))
    if norm <= 1e-12 * max(1.0, float(np.abs(col.values).max(initial=0.0))) * math.sqrt(n):
        return np.empty((n, 0))
    return (centered / norm)[:, None]


def _standardized(scores: np.ndarray, phi_centered: np.ndarray, s_phi: float) -> np.ndarray:
    """|u' phi| / sqrt(var) for every score column and every phi column"""
    n = scores.shape[0]
    return math.sqrt(n - 1) * np.abs(scores.T @ phi_centered) / math.sqrt(s_phi)


def linear_statistic(x: Column, phi: np.ndarray) -> float:
    """
    Standardized linear statistic |sum x_i phi_i - n xbar phibar| / sqrt(V), V the
    permutation variance; the maximum over levels for a categorical covariate.
    """
    phi = np.asarray(phi, dtype=float)
    centered = phi - phi.mean()
    s_phi = float(centered @ centered)
    scores = score_columns(x)
    if scores.shape[1] == 0 or s_phi <= 0.0:
        return 0.0
    return float(_standardized(scores, centered, s_phi).max())


def _permuted_maxima(scores: np.ndarray, owner: np.ndarray, n_covariates: int, centered: np.ndarray,
                     s_phi: float, seed: int, start: int, stop: int) -> np.ndarray:
    """Per-covariate maxima (rows) for permutations start..stop-1 (columns)"""
    n = centered.size
    block = np.empty((n, stop - start))
    for b in range(start, stop):
        block[:, b - start] = centered[stream(seed, "permutation", b).permutation(n)]
    stats = _standardized(scores, block, s_phi)
    out = np.zeros((n_covariates, stop - start))
    np.maximum.at(out, owner, stats)
    return out


def _phi_of(po: Union[PseudoOutcomes, np.ndarray]) -> np.ndarray:
    return np.asarray(po.phi if isinstance(po, PseudoOutcomes) else po, dtype=float)


def global_test(
    ds: Dataset,
    po: Union[PseudoOutcomes, np.ndarray],
    n_permutations: int,
    seed: int,
    covariates: Optional[Sequence[str]] = None,
    n_jobs: Optional[int] = None,
) -> HetTestResult:
    """Max-type permutation test of phi independent of the covariates"""
    phi = _phi_of(po)
    names = list(ds.covariates if covariates is None else covariates)
    if phi.shape[0] != ds.n_rows:
        raise ValueError("pseudo-outcomes are not aligned with the dataset rows")
    if n_permutations < 1:
        raise ValueError("n_permutations must be positive")

    blocks = [score_columns(ds.column(name)) for name in names]
    owner = np.concatenate([np.full(b.shape[1], j) for j, b in enumerate(blocks)] or [np.zeros(0)]).astype(np.int64)
    scores = np.column_stack(blocks) if owner.size else np.empty((ds.n_rows, 0))
    centered = phi - phi.mean()
    s_phi = float(centered @ centered)
    p = len(names)

    if scores.shape[1] == 0 or s_phi <= 0.0:
        logger.warning("Pseudo-outcomes or covariates carry no variation; homogeneity test is trivial")
        observed = np.zeros(p)
        null_max = np.zeros(n_permutations)
    else:
        observed = np.zeros(p)
        np.maximum.at(observed, owner, _standardized(scores, centered[:, None], s_phi)[:, 0])
        starts = list(range(0, n_permutations, PERMUTATION_BLOCK))
        parts = Parallel(n_jobs=n_jobs or settings.N_JOBS)(
            delayed(_permuted_maxima)(scores, owner, p, centered, s_phi, seed, s,
                                      min(s + PERMUTATION_BLOCK, n_permutations))
            for s in starts
        )
        null_max = np.concatenate(parts, axis=1).max(axis=0)

    statistic = float(observed.max()) if p else 0.0
    tol = 1e-10 * max(1.0, statistic)
    p_value = (1 + int(np.sum(null_max >= statistic - tol))) / (1 + n_permutations)
    per_covariate = [
        CovariateStatistic(
            name=name,
            statistic=float(observed[j]),
            adjusted_p=(1 + int(np.sum(null_max >= observed[j] - tol))) / (1 + n_permutations),
        )
        for j, name in enumerate(names)
    ]
    verbal = verbal_category(p_value)
    logger.info(f"Global homogeneity test: statistic {statistic:.4g}, p = {p_value:.4g} ({verbal.value})")
    return HetTestResult(
        statistic=statistic,
        per_covariate=per_covariate,
        p_value=p_value,
        surprise=surprise(p_value),
        verbal=verbal,
        n_permutations=n_permutations,
        seed=seed,
    )


def _check_p(p: float) -> None:
    if not (0.0 < p <= 1.0):
        raise ValueError(f"p-value must lie in (0, 1], got {p}")


def surprise(p: float) -> float:
    """Surprise value in bits: -log2(p)"""
    _check_p(p)
    return -math.log2(p) + 0.0


def verbal_category(p: float) -> VerbalCategory:
    _check_p(p)
    for bound, category in VERBAL_SCALE:
        if p >= bound:
            return category
    return VerbalCategory.VERY_STRONG


def verbal_evidence(p: float) -> VerbalEvidence:
    return VerbalEvidence(p_value=p, surprise=surprise(p), verbal=verbal_category(p))
