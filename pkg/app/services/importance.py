"""
Variable and interaction importance from the conditional-inference forest on (X, phi).
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from app.core.config import settings
from app.core.rng import derive_seed, stream
from app.models.dataset import FeatureMatrix
from app.schemas.importance import BoxSummary, ForestSummary, ImportanceReport, PartialDependenceCurve
from app.schemas.plan import ImportanceOptions
from app.services.ciforest import CIForest, fit_ciforest
from app.services.learners.base import Features, as_features
from app.services.learners.tree import Tree

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PDTable:
    """Partial dependence over one grid axis per forced covariate; values has one axis per covariate"""
    names: tuple[str, ...]
    grids: tuple[np.ndarray, ...]
    labels: tuple[tuple[str, ...], ...]
    values: np.ndarray


def _tree_vimp(tree: Tree, bag: np.ndarray, X: np.ndarray, phi: np.ndarray, n_repeats: int,
               seed: int, t: int) -> Optional[np.ndarray]:
    oob = np.flatnonzero(~bag)
    if oob.size == 0:
        return None
    X_oob, phi_oob = X[oob], phi[oob]
    baseline = float(np.mean((phi_oob - tree.predict(X_oob)) ** 2))
    out = np.zeros((n_repeats, X.shape[1]))
    for j in sorted(tree.used_features()):
        for r in range(n_repeats):
            permuted = X_oob.copy()
            permuted[:, j] = X_oob[stream(seed, "vimp", t, j, r).permutation(oob.size), j]
            out[r, j] = float(np.mean((phi_oob - tree.predict(permuted)) ** 2)) - baseline
    return out


def permutation_importance(forest: CIForest, features: Features, phi: np.ndarray, n_repeats: int = 5,
                           seed: int = 0, n_jobs: Optional[int] = None) -> np.ndarray:
    """
    Mean increase in out-of-bag squared error when one covariate is permuted among the
    OOB rows of a tree. A covariate a tree never splits on contributes exactly zero.
    """
    X = as_features(features).values
    phi = np.asarray(phi, dtype=float)
    if n_repeats < 1:
        raise ValueError("n_repeats must be positive")
    parts = Parallel(n_jobs=n_jobs or settings.N_JOBS)(
        delayed(_tree_vimp)(tree, bag, X, phi, n_repeats, seed, t)
        for t, (tree, bag) in enumerate(zip(forest.trees, forest.inbag))
    )
    parts = [part for part in parts if part is not None]
    if not parts:
        logger.warning("No tree has out-of-bag rows; importance is zero")
        return np.zeros(X.shape[1])
    return np.concatenate(parts, axis=0).mean(axis=0)


def ranking(names: Sequence[str], vimp: np.ndarray) -> list[str]:
    """Covariates by decreasing importance, ties broken by name"""
    return [name for _, name in sorted(zip(vimp, names), key=lambda t: (-t[0], t[1]))]


def pd_grid(X: FeatureMatrix, j: int, grid_size: int = 20) -> tuple[np.ndarray, tuple[str, ...]]:
    """Equispaced quantiles of a continuous column, or every level of a categorical one"""
    if X.is_categorical[j]:
        levels = X.levels[j]
        return np.arange(len(levels), dtype=float), tuple(levels)
    grid = np.unique(np.quantile(X.values[:, j], np.linspace(0.0, 1.0, grid_size)))
    return grid, tuple(f"{v:.4g}" for v in grid)


def _tree_pd(tree: Tree, expanded: np.ndarray, n_points: int, forced: Sequence[int],
             baseline: np.ndarray) -> np.ndarray:
    if not tree.used_features() & set(forced):
        return np.full(n_points, tree.predict(baseline).mean())
    return tree.predict(expanded).reshape(n_points, baseline.shape[0]).mean(axis=1)


def partial_dependence(forest: CIForest, features: Features, names: Sequence[str],
                       grids: Optional[Sequence[np.ndarray]] = None, grid_size: int = 20,
                       n_jobs: Optional[int] = None) -> PDTable:
    """Mean forest prediction over all rows with the named covariates forced to each grid point"""
    X = as_features(features)
    if not 1 <= len(names) <= 2:
        raise ValueError("partial dependence takes one or two covariates")
    forced = [X.index(name) for name in names]
    if grids is None:
        axes = [pd_grid(X, j, grid_size) for j in forced]
        grids = [grid for grid, _ in axes]
        labels = tuple(lab for _, lab in axes)
    else:
        grids = [np.asarray(g, dtype=float) for g in grids]
        labels = tuple(tuple(f"{v:.4g}" for v in g) for g in grids)

    points = np.array(list(itertools.product(*grids)), dtype=float).reshape(-1, len(forced))
    n = X.n_rows
    expanded = np.tile(X.values, (points.shape[0], 1))
    for axis, j in enumerate(forced):
        expanded[:, j] = np.repeat(points[:, axis], n)

    per_tree = Parallel(n_jobs=n_jobs or settings.N_JOBS)(
        delayed(_tree_pd)(tree, expanded, points.shape[0], forced, X.values) for tree in forest.trees
    )
    values = np.mean(per_tree, axis=0).reshape([g.size for g in grids])
    return PDTable(names=tuple(names), grids=tuple(grids), labels=labels, values=values)


def _sd(values: np.ndarray, axis: int) -> np.ndarray:
    if values.shape[axis] < 2:
        return np.zeros(np.delete(values.shape, axis))
    return values.std(axis=axis, ddof=1)


def pair_interaction(table: PDTable) -> float:
    """Mean of the spread of each covariate's conditional importance across the other's grid"""
    pd2 = table.values
    imp_j_given_k = _sd(pd2, axis=0)
    imp_k_given_j = _sd(pd2, axis=1)
    return 0.5 * (float(_sd(imp_j_given_k, axis=0)) + float(_sd(imp_k_given_j, axis=0)))


def interaction_importance(forest: CIForest, features: Features, names: Sequence[str],
                           vimp: Optional[np.ndarray] = None, grid_size: int = 20,
                           n_jobs: Optional[int] = None) -> np.ndarray:
    """Symmetric matrix over `names`; the diagonal holds `vimp` when given"""
    k = len(names)
    vint = np.zeros((k, k))
    for a, b in itertools.combinations(range(k), 2):
        table = partial_dependence(forest, features, [names[a], names[b]], grid_size=grid_size, n_jobs=n_jobs)
        vint[a, b] = vint[b, a] = pair_interaction(table)
    if vimp is not None:
        vint[np.diag_indices(k)] = vimp
    logger.debug(f"Computed interaction importance for {k * (k - 1) // 2} pairs")
    return vint


def selection_matrix(bootstrap_vimp: np.ndarray, names: Sequence[str], top_k: int) -> np.ndarray:
    """Z[b, f] = 1 when covariate f is among the top_k of run b"""
    Z = np.zeros(bootstrap_vimp.shape, dtype=int)
    k = min(top_k, len(names))
    index = {name: f for f, name in enumerate(names)}
    for b, row in enumerate(bootstrap_vimp):
        for name in ranking(names, row)[:k]:
            Z[b, index[name]] = 1
    return Z


def nogueira_stability(Z: np.ndarray) -> Optional[float]:
    """Stability of feature selections across runs, in [-1, 1]; None when the index is undefined"""
    Z = np.asarray(Z, dtype=float)
    B, p = Z.shape
    if B < 2 or p == 0:
        return None
    k_bar = Z.sum(axis=1).mean()
    denominator = (k_bar / p) * (1.0 - k_bar / p)
    if denominator <= 0.0:
        return None
    freq = Z.mean(axis=0)
    s2 = B / (B - 1) * freq * (1.0 - freq)
    return float(1.0 - s2.mean() / denominator)


def _bootstrap_run(X: FeatureMatrix, phi: np.ndarray, b: int, seed: int, options: ImportanceOptions) -> np.ndarray:
    rows = stream(seed, "bootstrap", b).integers(0, X.n_rows, size=X.n_rows)
    Xb, phib = X.take(rows), phi[rows]
    forest = fit_ciforest(Xb, phib, n_trees=options.bootstrap_trees, mtry=options.mtry, alpha=options.alpha,
                          seed=derive_seed(seed, "bootstrap", b), min_leaf=options.min_leaf,
                          max_depth=options.max_depth, n_jobs=1)
    return permutation_importance(forest, Xb, phib, n_repeats=1, seed=derive_seed(seed, "bootstrap-vimp", b),
                                  n_jobs=1)


def bootstrap_stability(features: Features, phi: np.ndarray, B: int, top_k: int, seed: int,
                        options: Optional[ImportanceOptions] = None,
                        n_jobs: Optional[int] = None) -> tuple[np.ndarray, Optional[float]]:
    """Importance refit on B bootstrap resamples and the stability of their top_k selections"""
    if B < 2:
        raise ValueError(f"bootstrap stability needs B >= 2, got {B}")
    X = as_features(features)
    phi = np.asarray(phi, dtype=float)
    options = options or ImportanceOptions()
    runs = Parallel(n_jobs=n_jobs or settings.N_JOBS)(
        delayed(_bootstrap_run)(X, phi, b, seed, options) for b in range(B)
    )
    bootstrap_vimp = np.array(runs).reshape(B, X.n_features)
    stability = nogueira_stability(selection_matrix(bootstrap_vimp, X.names, top_k))
    if stability is None:
        logger.warning("Selection stability is undefined for these runs")
    return bootstrap_vimp, stability


def box_summary(name: str, values: np.ndarray) -> BoxSummary:
    q = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])
    return BoxSummary(name=name, min=q[0], q1=q[1], median=q[2], q3=q[3], max=q[4])


def importance_report(
    features: Features,
    phi: np.ndarray,
    n_trees: int,
    seed: int,
    bootstrap_reps: int = 100,
    options: Optional[ImportanceOptions] = None,
    n_jobs: Optional[int] = None,
) -> ImportanceReport:
    """Forest, importance ranking, interaction matrix over the top covariates, bootstrap stability and PD curves"""
    X = as_features(features)
    phi = np.asarray(phi, dtype=float)
    options = options or ImportanceOptions()
    names = list(X.names)

    forest = fit_ciforest(X, phi, n_trees=n_trees, mtry=options.mtry, alpha=options.alpha,
                          seed=derive_seed(seed, "ciforest"), min_leaf=options.min_leaf,
                          max_depth=options.max_depth, n_jobs=n_jobs)
    vimp = permutation_importance(forest, X, phi, options.n_repeats, derive_seed(seed, "vimp"), n_jobs)
    ranked = ranking(names, vimp)
    top = ranked[:min(options.top_k, len(names))]
    vint = interaction_importance(forest, X, top, np.array([vimp[X.index(n)] for n in top]),
                                  options.grid_size, n_jobs)

    bootstrap_vimp, stability, frequency, boxes = np.empty((0, len(names))), None, [], []
    if bootstrap_reps >= 2 and names:
        bootstrap_vimp, stability = bootstrap_stability(X, phi, bootstrap_reps, options.top_k,
                                                        derive_seed(seed, "stability"), options, n_jobs)
        frequency = selection_matrix(bootstrap_vimp, names, options.top_k).mean(axis=0).tolist()
        boxes = [box_summary(name, bootstrap_vimp[:, f]) for f, name in enumerate(names)]

    curves = []
    for name in ranked[:options.pd_covariates]:
        table = partial_dependence(forest, X, [name], grid_size=options.grid_size, n_jobs=n_jobs)
        curves.append(PartialDependenceCurve(covariate=name, grid=table.grids[0].tolist(),
                                             labels=list(table.labels[0]), values=table.values.tolist(),
                                             categorical=bool(X.is_categorical[X.index(name)])))

    logger.info(f"Importance ranking leads with {', '.join(ranked[:3])}")
    return ImportanceReport(
        names=names,
        vimp=vimp.tolist(),
        ranking=ranked,
        top_k=len(top),
        vint_names=top,
        vint=vint.tolist(),
        bootstrap_vimp=bootstrap_vimp.tolist(),
        selection_frequency=frequency,
        stability=stability,
        bootstrap_boxes=boxes,
        partial_dependence=curves,
        forest=ForestSummary(n_trees=forest.n_trees, mtry=forest.mtry, alpha=forest.alpha,
                             min_leaf=forest.min_leaf, mean_leaves=forest.mean_leaves,
                             root_only_fraction=forest.root_only_fraction),
    )
