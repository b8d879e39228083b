"""
Lasso by covariance-update coordinate descent.

Objective on standardized columns: (1 / 2n) * ||y - ybar - Xs b||^2 + lambda * ||b||_1.
Coefficients are reported back on the original column scale.
"""
import logging
from typing import Any, Optional, Sequence

import numpy as np

from app.core.rng import stream
from app.models.dataset import FeatureMatrix
from app.models.enums import LearnerKind, TaskKind
from app.services.learners.base import Features, Model, as_features, check_finite

logger = logging.getLogger(__name__)

TOLERANCE = 1e-7
MAX_SWEEPS = 10_000
N_LAMBDA = 100


def soft_threshold(z: float, lam: float) -> float:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def coordinate_descent(gram: np.ndarray, xty: np.ndarray, lam: float, beta: np.ndarray,
                       tol: float = TOLERANCE, max_sweeps: int = MAX_SWEEPS) -> np.ndarray:
    """Minimize 1/2 b'Gb - c'b + lam*|b|_1 starting from beta (updated copy returned)"""
    beta = beta.copy()
    grad = xty - gram @ beta
    diag = np.diag(gram)
    active = np.flatnonzero(diag > 0)
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in active:
            old = beta[j]
            new = soft_threshold(grad[j] + diag[j] * old, lam) / diag[j]
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                grad -= gram[:, j] * delta
                max_delta = max(max_delta, abs(delta))
        if max_delta < tol:
            break
    else:
        logger.warning(f"Coordinate descent did not converge in {max_sweeps} sweeps (lambda={lam:.4g})")
    return beta


class Standardizer:
    """Column centering and population-sd scaling; constant columns get scale 0"""

    def __init__(self, X: np.ndarray):
        self.mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(self.mean)), sd, 0.0)

    def transform(self, X: np.ndarray) -> np.ndarray:
        safe = np.where(self.scale > 0, self.scale, 1.0)
        return np.where(self.scale > 0, (X - self.mean) / safe, 0.0)


def lambda_max(Xs: np.ndarray, yc: np.ndarray) -> float:
    """Smallest lambda with all slopes at zero"""
    if Xs.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(Xs.T @ yc)) / Xs.shape[0])


def default_grid(lmax: float, n: int, p: int, n_lambda: int = N_LAMBDA) -> np.ndarray:
    if lmax <= 0.0:
        return np.array([0.0])
    ratio = 1e-4 if n > p else 1e-2
    return np.geomspace(lmax, lmax * ratio, n_lambda)


def lasso_path(Xs: np.ndarray, yc: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
    """Standardized-scale coefficients for each lambda (rows), warm-started in decreasing order"""
    n, p = Xs.shape
    gram = Xs.T @ Xs / n
    xty = Xs.T @ yc / n
    path = np.zeros((len(lambdas), p))
    beta = np.zeros(p)
    for i in np.argsort(-np.asarray(lambdas), kind="stable"):
        beta = coordinate_descent(gram, xty, float(lambdas[i]), beta)
        path[i] = beta
    return path


class LassoModel(Model):
    kind = LearnerKind.LASSO

    def __init__(self, intercept: float, coef: np.ndarray, labels: list[str], lam: float,
                 task: TaskKind = TaskKind.REGRESSION, lambda_grid: Optional[np.ndarray] = None,
                 cv_mean: Optional[np.ndarray] = None):
        super().__init__(task)
        self.intercept = intercept
        self.coef = coef
        self.labels = labels
        self.lam = lam
        self.lambda_grid = lambda_grid
        self.cv_mean = cv_mean

    def _predict(self, X: FeatureMatrix) -> np.ndarray:
        design, _ = X.one_hot()
        return self.intercept + design @ self.coef

    def params(self) -> dict[str, Any]:
        return {
            "lambda": self.lam,
            "intercept": self.intercept,
            "coef": dict(zip(self.labels, self.coef.tolist())),
        }


def _fit_scaled(design: np.ndarray, y: np.ndarray, lambdas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Original-scale (intercepts, coefficients) along the lambda grid"""
    scaler = Standardizer(design)
    ybar = float(y.mean())
    path = lasso_path(scaler.transform(design), y - ybar, lambdas)
    safe = np.where(scaler.scale > 0, scaler.scale, 1.0)
    coefs = np.where(scaler.scale > 0, path / safe, 0.0)
    intercepts = ybar - coefs @ scaler.mean
    return intercepts, coefs


def _cv_errors(design: np.ndarray, y: np.ndarray, lambdas: np.ndarray, cv_folds: int,
               seed: int) -> np.ndarray:
    """Held-out mean squared error per fold (rows) and lambda (columns)"""
    n = design.shape[0]
    k = min(cv_folds, n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[stream(seed, "lasso-cv").permutation(n)] = np.arange(n) % k
    errors = np.zeros((k, len(lambdas)))
    for f in range(k):
        test = fold_of == f
        intercepts, coefs = _fit_scaled(design[~test], y[~test], lambdas)
        pred = intercepts[:, None] + coefs @ design[test].T
        errors[f] = ((y[test][None, :] - pred) ** 2).mean(axis=1)
    return errors


def fit_lasso(
    design: Features,
    y: np.ndarray,
    lambda_grid: Optional[Sequence[float]] = None,
    cv_folds: int = 5,
    seed: int = 0,
    task: TaskKind = TaskKind.REGRESSION,
) -> LassoModel:
    """
    Lasso with lambda chosen by K-fold CV under the one-standard-error rule.

    A single-value grid skips cross-validation. Categorical columns of a FeatureMatrix
    enter as reference-coded indicators.
    """
    X = as_features(design)
    matrix, labels = X.one_hot()
    y = np.asarray(y, dtype=float)
    check_finite(matrix, y)
    n, p = matrix.shape
    if n < 2:
        raise ValueError("lasso needs at least two rows")

    scaler = Standardizer(matrix)
    if lambda_grid is None:
        lambdas = default_grid(lambda_max(scaler.transform(matrix), y - y.mean()), n, p)
    else:
        lambdas = np.asarray(lambda_grid, dtype=float)
        if lambdas.size == 0 or np.any(lambdas < 0):
            raise ValueError("lambda grid must be non-empty and non-negative")

    cv_mean = None
    if lambdas.size == 1:
        chosen = 0
    else:
        if cv_folds < 2:
            raise ValueError(f"cannot cross-validate lasso with {cv_folds} folds on {n} rows")
        errors = _cv_errors(matrix, y, lambdas, cv_folds, seed)
        cv_mean = errors.mean(axis=0)
        cv_se = errors.std(axis=0, ddof=1) / np.sqrt(errors.shape[0])
        best = int(np.argmin(cv_mean))
        eligible = np.flatnonzero(cv_mean <= cv_mean[best] + cv_se[best])
        chosen = int(eligible[np.argmax(lambdas[eligible])])

    intercepts, coefs = _fit_scaled(matrix, y, lambdas[[chosen]])
    return LassoModel(
        intercept=float(intercepts[0]),
        coef=coefs[0],
        labels=labels,
        lam=float(lambdas[chosen]),
        task=task,
        lambda_grid=lambdas,
        cv_mean=cv_mean,
    )
