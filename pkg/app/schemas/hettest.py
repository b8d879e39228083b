from pydantic import BaseModel, Field

from app.models.enums import VerbalCategory


class CovariateStatistic(BaseModel):
    name: str
    statistic: float
    adjusted_p: float = Field(..., description="Single-step max-T adjusted permutation p-value")


class HetTestResult(BaseModel):
    """Global permutation test of homogeneity"""
    statistic: float
    per_covariate: list[CovariateStatistic]
    p_value: float = Field(..., gt=0.0, le=1.0)
    surprise: float
    verbal: VerbalCategory
    n_permutations: int
    seed: int


class VerbalEvidence(BaseModel):
    p_value: float
    surprise: float
    verbal: VerbalCategory
