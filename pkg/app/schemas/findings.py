from typing import Optional

from pydantic import BaseModel, Field

from app.models.enums import (
    CredibilityNote,
    DirectionMatch,
    EvidenceCategory,
    ExpectedDirection,
    VerbalCategory,
)
from app.schemas.cate import CateSummary
from app.schemas.displays import EffectCurve, FigureManifest, GroupEffect
from app.schemas.hettest import HetTestResult
from app.schemas.importance import ImportanceReport


class DatasetCreation(BaseModel):
    """What analysis-dataset creation did to the raw data"""
    n_rows: int
    covariates: list[str]
    dropped: list[str] = Field(default_factory=list)
    merged_levels: dict[str, list[str]] = Field(default_factory=dict)
    imputed_cells: dict[str, int] = Field(default_factory=dict)
    indicators: list[str] = Field(default_factory=list)


class GroupEffectTable(BaseModel):
    covariates: list[str]
    groups: list[GroupEffect]


class DisplaySection(BaseModel):
    group_effects: list[GroupEffectTable] = Field(default_factory=list)
    curves: list[EffectCurve] = Field(default_factory=list)
    manifest: FigureManifest = Field(default_factory=FigureManifest)


class CovariateCredibility(BaseModel):
    name: str
    evidence: EvidenceCategory
    expected_direction: ExpectedDirection
    source: Optional[str] = None
    analyzed: bool = Field(..., description="False when analysis-dataset creation dropped the covariate")
    rank: Optional[int] = None
    in_top_k: bool = False
    observed_direction: Optional[ExpectedDirection] = None
    direction_match: DirectionMatch = DirectionMatch.UNSPECIFIED
    note: Optional[CredibilityNote] = Field(None, description="Only set for top-k findings")


class SensitivityResult(BaseModel):
    label: str
    description: Optional[str] = None
    findings: str
    available: bool
    p_value: Optional[float] = None
    verbal: Optional[VerbalCategory] = None
    verbal_changed: Optional[bool] = None
    top_k_overlap: Optional[int] = None
    error: Optional[str] = None


class FindingsReport(BaseModel):
    seed: int
    dataset: DatasetCreation
    het_test: HetTestResult
    importance: ImportanceReport
    displays: DisplaySection
    cate: CateSummary
    credibility: list[CovariateCredibility]
    consistency: list[str] = Field(
        default_factory=list, description="Plan covariates outside the top-k findings"
    )
    sensitivity: list[SensitivityResult] = Field(default_factory=list)
    rules: list[str] = Field(default_factory=list)
