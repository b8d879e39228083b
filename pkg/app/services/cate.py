"""
DR-learner: stratified cross-fitting, nuisance estimation and pseudo-outcomes.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from app.core.config import settings
from app.core.errors import DataError
from app.core.rng import derive_seed, stream
from app.models.dataset import Dataset, FeatureMatrix
from app.models.enums import PropensityKind, TaskKind
from app.schemas.cate import AteSummary, CateSummary, FoldDiagnostics
from app.schemas.plan import KnownPropensity, LearnerConfig, Propensity
from app.services.learners import StackedModel, fit_stacked

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CrossFitPlan:
    fold_of: np.ndarray
    k: int
    seed: int

    def test_rows(self, fold: int) -> np.ndarray:
        return self.fold_of == fold

    def train_rows(self, fold: int) -> np.ndarray:
        return self.fold_of != fold


@dataclass(frozen=True)
class OracleNuisances:
    """Known nuisance values injected in place of fitted models"""
    mu0: np.ndarray
    mu1: np.ndarray
    pi: Optional[np.ndarray] = None


@dataclass
class NuisanceFit:
    mu0: StackedModel
    mu1: StackedModel
    pi_model: Optional[StackedModel]
    pi_value: Optional[float]
    diagnostics: FoldDiagnostics

    def predict_pi(self, X: FeatureMatrix) -> np.ndarray:
        if self.pi_model is None:
            return np.full(X.n_rows, self.pi_value)
        return self.pi_model.predict(X)


@dataclass(frozen=True)
class PseudoOutcomes:
    phi: np.ndarray
    pi_hat: np.ndarray
    mu0_hat: np.ndarray
    mu1_hat: np.ndarray
    fold_of: np.ndarray
    clip_epsilon: float
    n_clipped: int = 0
    diagnostics: list[FoldDiagnostics] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "row_id": np.arange(self.n),
            "phi": self.phi,
            "pi_hat": self.pi_hat,
            "mu0_hat": self.mu0_hat,
            "mu1_hat": self.mu1_hat,
            "fold": self.fold_of,
        })

    def write_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def assign_folds(ds: Dataset, k: int, seed: int) -> CrossFitPlan:
    """Random partition into k folds, stratified by treatment arm"""
    a = ds.treatment
    arms = [np.flatnonzero(a == 0), np.flatnonzero(a == 1)]
    smallest = min(arm.size for arm in arms)
    if k < 2:
        raise DataError(f"k_folds must be at least 2, got {k}")
    if k > smallest:
        raise DataError(f"k_folds={k} exceeds the smaller arm size {smallest}")

    rng = stream(seed, "folds")
    fold_of = np.empty(ds.n_rows, dtype=np.int64)
    offset = 0
    for arm in arms:
        fold_of[rng.permutation(arm)] = (np.arange(arm.size) + offset) % k
        offset += arm.size
    return CrossFitPlan(fold_of=fold_of, k=k, seed=seed)


def fit_nuisances(
    ds: Dataset,
    plan: CrossFitPlan,
    fold: int,
    learners: LearnerConfig,
    propensity: Optional[Propensity] = None,
) -> NuisanceFit:
    """Fit mu0, mu1 (and pi if estimated) on the rows outside `fold`"""
    propensity = propensity or KnownPropensity()
    X = FeatureMatrix.from_dataset(ds)
    y, a = ds.outcome, ds.treatment
    train = plan.train_rows(fold)
    control, treated = train & (a == 0), train & (a == 1)
    if not control.any() or not treated.any():
        raise DataError(f"fold {fold}: training data lacks an arm")

    specs = learners.library
    mu0 = fit_stacked(specs, X.take(control), y[control], learners.cv_folds,
                      derive_seed(plan.seed, "mu0", fold))
    mu1 = fit_stacked(specs, X.take(treated), y[treated], learners.cv_folds,
                      derive_seed(plan.seed, "mu1", fold))
    pi_model, pi_value = None, None
    if isinstance(propensity, KnownPropensity):
        pi_value = propensity.value
    else:
        pi_model = fit_stacked(specs, X.take(train), a[train].astype(float), learners.cv_folds,
                               derive_seed(plan.seed, "pi", fold), task=TaskKind.PROBABILITY)

    diagnostics = FoldDiagnostics(
        fold=fold,
        n_train_control=int(control.sum()),
        n_train_treated=int(treated.sum()),
        mu0=mu0.summary(),
        mu1=mu1.summary(),
        pi=pi_model.summary() if pi_model is not None else None,
    )
    return NuisanceFit(mu0, mu1, pi_model, pi_value, diagnostics)


def dr_pseudo_outcome(y: np.ndarray, a: np.ndarray, pi: np.ndarray, mu0: np.ndarray,
                      mu1: np.ndarray) -> np.ndarray:
    """(A - pi) / (pi (1 - pi)) * (Y - mu_A) + mu1 - mu0"""
    mu_a = np.where(a == 1, mu1, mu0)
    return (a - pi) / (pi * (1.0 - pi)) * (y - mu_a) + mu1 - mu0


def _fold_nuisances(ds: Dataset, plan: CrossFitPlan, fold: int, learners: LearnerConfig,
                    propensity: Propensity) -> tuple[int, np.ndarray, np.ndarray, np.ndarray, FoldDiagnostics]:
    fit = fit_nuisances(ds, plan, fold, learners, propensity)
    X_test = FeatureMatrix.from_dataset(ds).take(plan.test_rows(fold))
    return fold, fit.mu0.predict(X_test), fit.mu1.predict(X_test), fit.predict_pi(X_test), fit.diagnostics


def pseudo_outcomes(
    ds: Dataset,
    plan: CrossFitPlan,
    learners: LearnerConfig,
    clip_epsilon: Optional[float] = None,
    propensity: Optional[Propensity] = None,
    override: Optional[OracleNuisances] = None,
    n_jobs: Optional[int] = None,
) -> PseudoOutcomes:
    """
    Cross-fitted DR pseudo-outcomes.

    Each row's nuisance predictions come from models trained without its fold. With
    `override`, the given nuisance values are used as-is (pi falls back to the propensity
    setting when the override carries none).
    """
    eps = settings.PROPENSITY_CLIP if clip_epsilon is None else clip_epsilon
    if not 0.0 < eps < 0.5:
        raise ValueError(f"clip_epsilon must lie in (0, 0.5), got {eps}")
    propensity = propensity or KnownPropensity()
    n = ds.n_rows
    mu0, mu1, pi = np.empty(n), np.empty(n), np.empty(n)
    diagnostics: list[FoldDiagnostics] = []

    if override is not None and (override.pi is not None or isinstance(propensity, KnownPropensity)):
        logger.info("Using injected nuisance values")
        mu0[:], mu1[:] = override.mu0, override.mu1
        pi[:] = override.pi if override.pi is not None else propensity.value
    else:
        logger.info(f"Cross-fitting nuisances over {plan.k} folds")
        results = Parallel(n_jobs=n_jobs or settings.N_JOBS)(
            delayed(_fold_nuisances)(ds, plan, fold, learners, propensity) for fold in range(plan.k)
        )
        for fold, m0, m1, p, diag in results:
            test = plan.test_rows(fold)
            mu0[test], mu1[test], pi[test] = m0, m1, p
            diagnostics.append(diag)
        if override is not None:
            mu0[:], mu1[:] = override.mu0, override.mu1

    clipped = np.clip(pi, eps, 1.0 - eps)
    n_clipped = int(np.sum(clipped != pi))
    if n_clipped:
        logger.warning(f"Clipped {n_clipped} propensity values to [{eps}, {1 - eps}]")
    phi = dr_pseudo_outcome(ds.outcome, ds.treatment.astype(float), clipped, mu0, mu1)
    if not np.all(np.isfinite(phi)):
        raise DataError("pseudo-outcomes are not finite")
    return PseudoOutcomes(
        phi=phi,
        pi_hat=clipped,
        mu0_hat=mu0,
        mu1_hat=mu1,
        fold_of=plan.fold_of.copy(),
        clip_epsilon=eps,
        n_clipped=n_clipped,
        diagnostics=diagnostics,
    )


def ate_summary(po: PseudoOutcomes) -> AteSummary:
    """Mean pseudo-outcome with a normal-approximation 95% interval"""
    if po.n < 2:
        raise ValueError("ATE summary needs at least two rows")
    if np.ptp(po.phi) == 0.0:
        # no spread: exact value and a zero-width interval
        estimate, se = float(po.phi[0]), 0.0
    else:
        estimate = float(po.phi.mean())
        se = float(po.phi.std(ddof=1) / np.sqrt(po.n))
    return AteSummary(estimate=estimate, se=se, ci_low=estimate - 1.96 * se,
                      ci_high=estimate + 1.96 * se, n=po.n)


def cate_summary(po: PseudoOutcomes, propensity: Propensity) -> CateSummary:
    kind = PropensityKind.KNOWN if isinstance(propensity, KnownPropensity) else PropensityKind.ESTIMATED
    return CateSummary(
        k_folds=int(po.fold_of.max()) + 1 if po.n else 0,
        clip_epsilon=po.clip_epsilon,
        propensity=kind,
        n_clipped=po.n_clipped,
        ate=ate_summary(po),
        folds=po.diagnostics,
    )
