from typing import Optional

from pydantic import BaseModel, Field


class PartialDependenceCurve(BaseModel):
    covariate: str
    grid: list[float] = Field(..., description="Grid values, level indices for categorical covariates")
    labels: list[str]
    values: list[float]
    categorical: bool = False


class BoxSummary(BaseModel):
    name: str
    min: float
    q1: float
    median: float
    q3: float
    max: float


class ForestSummary(BaseModel):
    n_trees: int
    mtry: int
    alpha: float
    min_leaf: int
    mean_leaves: float
    root_only_fraction: float


class ImportanceReport(BaseModel):
    names: list[str]
    vimp: list[float] = Field(..., description="OOB permutation importance per covariate, units of phi squared")
    ranking: list[str]
    top_k: int
    vint_names: list[str] = Field(..., description="Top covariates spanning the interaction matrix")
    vint: list[list[float]]
    bootstrap_vimp: list[list[float]] = Field(default_factory=list)
    selection_frequency: list[float] = Field(default_factory=list)
    stability: Optional[float] = Field(None, description="Nogueira index, None when undefined")
    bootstrap_boxes: list[BoxSummary] = Field(default_factory=list)
    partial_dependence: list[PartialDependenceCurve] = Field(default_factory=list)
    forest: ForestSummary

    def rank_of(self, name: str) -> Optional[int]:
        """1-based rank, None if the covariate was not analyzed"""
        try:
            return self.ranking.index(name) + 1
        except ValueError:
            return None
