from typing import Optional

from pydantic import BaseModel, Field

from app.models.enums import LearnerKind, PropensityKind


class LearnerRisk(BaseModel):
    kind: LearnerKind
    weight: float
    cv_risk: Optional[float] = Field(None, description="Out-of-fold mean squared error, None if the learner failed")
    failed: bool = False


class StackSummary(BaseModel):
    learners: list[LearnerRisk]
    stacked_cv_risk: float


class FoldDiagnostics(BaseModel):
    """Nuisance fits used for the rows of one fold"""
    fold: int
    n_train_control: int
    n_train_treated: int
    mu0: Optional[StackSummary] = None
    mu1: Optional[StackSummary] = None
    pi: Optional[StackSummary] = None


class AteSummary(BaseModel):
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    n: int


class CateSummary(BaseModel):
    k_folds: int
    clip_epsilon: float
    propensity: PropensityKind
    n_clipped: int = Field(..., description="Rows whose propensity was moved onto a clip bound")
    ate: AteSummary
    folds: list[FoldDiagnostics]
