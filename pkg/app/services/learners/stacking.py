"""
Cross-validated stacking of base learners with simplex-constrained weights.
"""
import itertools
import logging
from typing import Any, Optional, Sequence

import numpy as np

from app.core.errors import LearnerError
from app.core.rng import derive_seed, stream
from app.models.dataset import FeatureMatrix
from app.models.enums import LearnerKind, TaskKind
from app.schemas.cate import LearnerRisk, StackSummary
from app.schemas.plan import LearnerSpec
from app.services.learners.base import Features, Model, as_features
from app.services.learners.ensemble import fit_boosting, fit_forest
from app.services.learners.lasso import fit_lasso
from app.services.learners.tree import fit_cart

logger = logging.getLogger(__name__)

MAX_EXACT_LEARNERS = 12

BUILDERS = {
    LearnerKind.LASSO: fit_lasso,
    LearnerKind.TREE: fit_cart,
    LearnerKind.FOREST: fit_forest,
    LearnerKind.BOOSTING: fit_boosting,
}


def fit_learner(spec: LearnerSpec, features: Features, y: np.ndarray, seed: int,
                task: TaskKind = TaskKind.REGRESSION) -> Model:
    return BUILDERS[spec.kind](features, y, seed=seed, task=task, **spec.params)


def simplex_least_squares(Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    argmin ||y - Zw||^2 over the probability simplex.

    Solved exactly by enumerating supports: each support's equality-constrained problem is
    a small KKT system, and the minimum-norm solution spreads weight evenly across
    duplicated columns. Among equal losses the largest support wins.
    """
    n, m = Z.shape
    if m == 0:
        raise ValueError("no columns to weight")
    if m > MAX_EXACT_LEARNERS:
        raise ValueError(f"exact stacking supports at most {MAX_EXACT_LEARNERS} learners")

    best_w, best_loss, best_size = None, np.inf, 0
    for size in range(1, m + 1):
        for support in itertools.combinations(range(m), size):
            Zs = Z[:, support]
            kkt = np.zeros((size + 1, size + 1))
            kkt[:size, :size] = 2.0 * Zs.T @ Zs
            kkt[:size, size] = 1.0
            kkt[size, :size] = 1.0
            rhs = np.append(2.0 * Zs.T @ y, 1.0)
            solution = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            w_s = solution[:size]
            if np.any(w_s < -1e-10) or abs(w_s.sum() - 1.0) > 1e-8:
                continue
            w = np.zeros(m)
            w[list(support)] = np.clip(w_s, 0.0, None)
            w /= w.sum()
            loss = float(np.sum((y - Z @ w) ** 2))
            tol = 1e-10 * max(1.0, best_loss if np.isfinite(best_loss) else loss)
            if loss < best_loss - tol or (abs(loss - best_loss) <= tol and size > best_size):
                best_w, best_loss, best_size = w, loss, size
    return best_w


class StackedModel(Model):
    kind = LearnerKind.STACKED

    def __init__(self, base: list[Optional[Model]], weights: np.ndarray, specs: Sequence[LearnerSpec],
                 task: TaskKind = TaskKind.REGRESSION, cv_risks: Optional[list[Optional[float]]] = None,
                 stacked_cv_risk: float = float("nan")):
        super().__init__(task)
        self.base = base
        self.weights = weights
        self.specs = list(specs)
        self.cv_risks = cv_risks or [None] * len(base)
        self.stacked_cv_risk = stacked_cv_risk

    def _predict(self, X: FeatureMatrix) -> np.ndarray:
        out = np.zeros(X.n_rows)
        for model, w in zip(self.base, self.weights):
            if model is not None and w > 0:
                out += w * model.predict(X)
        return out

    def summary(self) -> StackSummary:
        return StackSummary(
            learners=[
                LearnerRisk(kind=spec.kind, weight=float(w), cv_risk=risk, failed=risk is None)
                for spec, w, risk in zip(self.specs, self.weights, self.cv_risks)
            ],
            stacked_cv_risk=self.stacked_cv_risk,
        )

    def params(self) -> dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "base": [None if m is None else m.to_dict() for m in self.base],
        }


def cv_folds_of(n: int, cv_folds: int, seed: int) -> np.ndarray:
    k = min(cv_folds, n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[stream(seed, "stack-folds").permutation(n)] = np.arange(n) % k
    return fold_of


def fit_stacked(
    learner_specs: Sequence[LearnerSpec],
    features: Features,
    y: np.ndarray,
    cv_folds: int = 5,
    seed: int = 0,
    task: TaskKind = TaskKind.REGRESSION,
) -> StackedModel:
    """Weights from out-of-fold predictions, then base learners refit on all rows"""
    if not learner_specs:
        raise ValueError("stacking needs at least one learner spec")
    X = as_features(features)
    y = np.asarray(y, dtype=float)
    n = X.n_rows
    if n < 2 or cv_folds < 2:
        raise ValueError(f"cannot cross-validate {n} rows with {cv_folds} folds")

    fold_of = cv_folds_of(n, cv_folds, seed)
    Z = np.zeros((n, len(learner_specs)))
    ok = np.zeros(len(learner_specs), dtype=bool)
    for m, spec in enumerate(learner_specs):
        try:
            for f in np.unique(fold_of):
                test = fold_of == f
                model = fit_learner(spec, X.take(~test), y[~test], derive_seed(seed, "stack", m, int(f)), task)
                Z[test, m] = model.predict(X.take(test))
            ok[m] = bool(np.all(np.isfinite(Z[:, m])))
            if not ok[m]:
                logger.warning(f"Learner {spec.kind.value} produced non-finite predictions, dropped")
        except Exception as e:
            logger.warning(f"Learner {spec.kind.value} failed and is dropped from the stack: {e}")
    if not ok.any():
        raise LearnerError("all learners in the stacking library failed")

    weights = np.zeros(len(learner_specs))
    weights[ok] = simplex_least_squares(Z[:, ok], y)
    cv_risks = [float(np.mean((y - Z[:, m]) ** 2)) if ok[m] else None for m in range(len(learner_specs))]
    stacked_risk = float(np.mean((y - Z[:, ok] @ weights[ok]) ** 2))

    base: list[Optional[Model]] = []
    for m, spec in enumerate(learner_specs):
        if weights[m] > 0:
            try:
                base.append(fit_learner(spec, X, y, derive_seed(seed, "stack", m, "full"), task))
            except Exception as e:
                raise LearnerError(f"refitting learner {spec.kind.value} on all rows failed: {e}") from e
        else:
            base.append(None)
    logger.debug(f"Stacking weights {np.round(weights, 4).tolist()} (cv risk {stacked_risk:.4g})")
    return StackedModel(base, weights, learner_specs, task, cv_risks, stacked_risk)
