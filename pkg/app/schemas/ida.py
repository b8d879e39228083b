from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.models.enums import AssociationMethod, ColumnKind


class ContinuousSummary(BaseModel):
    mean: float
    sd: Optional[float] = None
    min: float
    q1: float
    median: float
    q3: float
    max: float


class ColumnSummary(BaseModel):
    """Univariate summary of one column"""
    name: str
    kind: ColumnKind
    count: int = Field(..., description="Observed (non-missing) cells")
    missing_count: int
    continuous: Optional[ContinuousSummary] = None
    frequencies: Optional[dict[str, int]] = None


class StratumSummary(BaseModel):
    level: str
    n: int
    columns: list[ColumnSummary]


class StratifiedSummary(BaseModel):
    by: str
    strata: list[StratumSummary]


class MissingPattern(BaseModel):
    missing: list[str] = Field(..., description="Columns missing together in this pattern")
    count: int


class MissingnessReport(BaseModel):
    fractions: dict[str, float]
    patterns: list[MissingPattern]


class AssociationMatrix(BaseModel):
    """Absolute pairwise association between covariates"""
    names: list[str]
    values: list[list[float]]
    methods: list[list[Optional[AssociationMethod]]]

    @model_validator(mode="after")
    def check_matrix(self) -> "AssociationMatrix":
        m = self.array()
        p = len(self.names)
        if m.shape != (p, p) or len(self.methods) != p:
            raise ValueError("association matrix shape does not match its names")
        if not np.allclose(m, m.T, atol=1e-12):
            raise ValueError("association matrix must be symmetric")
        if p and not np.allclose(np.diag(m), 1.0):
            raise ValueError("association matrix diagonal must be 1")
        if np.any(m < -1e-12) or np.any(m > 1.0 + 1e-12):
            raise ValueError("associations must lie in [0, 1]")
        return self

    def array(self) -> np.ndarray:
        return np.array(self.values, dtype=float).reshape(len(self.names), len(self.names))


class DendrogramMerge(BaseModel):
    left: int = Field(..., description="Cluster id, ids < p are covariates")
    right: int
    height: float
    size: int
    members: list[str]


class Dendrogram(BaseModel):
    names: list[str]
    merges: list[DendrogramMerge]
    order: list[str] = Field(..., description="Leaf order for plotting")


class IdaRoles(BaseModel):
    outcome: str
    treatment: str
    covariates: list[str]


class IdaReport(BaseModel):
    n_rows: int
    roles: IdaRoles
    summaries: list[ColumnSummary]
    by_treatment: StratifiedSummary
    missingness: MissingnessReport
    noninformative: list[str] = Field(..., description="Covariates analysis-dataset creation would drop")
    association: AssociationMatrix
    dendrogram: Optional[Dendrogram] = None
    figures: list[str] = Field(default_factory=list)
