from app.services.learners.base import Model, PROBABILITY_BOUNDS, as_features
from app.services.learners.ensemble import BoostingModel, ForestModel, default_mtry, fit_boosting, fit_forest
from app.services.learners.lasso import LassoModel, fit_lasso
from app.services.learners.stacking import StackedModel, fit_learner, fit_stacked, simplex_least_squares
from app.services.learners.tree import Tree, TreeModel, fit_cart

__all__ = [
    "BoostingModel",
    "ForestModel",
    "LassoModel",
    "Model",
    "PROBABILITY_BOUNDS",
    "StackedModel",
    "Tree",
    "TreeModel",
    "as_features",
    "default_mtry",
    "fit_boosting",
    "fit_cart",
    "fit_forest",
    "fit_lasso",
    "fit_learner",
    "fit_stacked",
    "simplex_least_squares",
]
