import json
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.core.config import settings
from app.core.errors import ConfigError
from app.models.enums import EvidenceCategory, ExpectedDirection, LearnerKind


class CovariatePlan(BaseModel):
    """Pre-declared covariate with its a-priori evidence"""
    name: str = Field(..., min_length=1)
    evidence: EvidenceCategory = EvidenceCategory.LOW
    expected_direction: ExpectedDirection = ExpectedDirection.UNSPECIFIED
    source: Optional[str] = None

    @model_validator(mode="after")
    def check_source(self) -> "CovariatePlan":
        if self.evidence in (EvidenceCategory.MODERATE, EvidenceCategory.HIGH):
            if not (self.source and self.source.strip()):
                raise ValueError(
                    f"covariate {self.name}: {self.evidence.value} evidence requires a source"
                )
        return self


class KnownPropensity(BaseModel):
    kind: Literal["known"] = "known"
    value: float = Field(0.5, gt=0.0, lt=1.0)


class EstimatedPropensity(BaseModel):
    kind: Literal["estimated"] = "estimated"


Propensity = Annotated[Union[KnownPropensity, EstimatedPropensity], Field(discriminator="kind")]


class AnalysisPlan(BaseModel):
    """Analysis plan fixed before the data are analyzed"""
    outcome: str
    treatment: str
    treated_level: Optional[str] = Field(
        None, description="Treatment value coded 1 when the column is not already 0/1"
    )
    covariates: list[CovariatePlan] = Field(..., min_length=1)
    seed: int = Field(20240101, ge=0, lt=2**64)
    k_folds: int = Field(5, ge=2)
    n_permutations: int = Field(9999, ge=99)
    n_trees: int = Field(500, ge=1)
    propensity: Propensity = Field(default_factory=KnownPropensity)
    bootstrap_reps: int = Field(100, ge=2)

    @model_validator(mode="after")
    def check_roles(self) -> "AnalysisPlan":
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")
        if self.outcome == self.treatment:
            raise ValueError("outcome and treatment must be different columns")
        overlap = {self.outcome, self.treatment} & set(names)
        if overlap:
            raise ValueError(f"role columns cannot be covariates: {sorted(overlap)}")
        return self

    @property
    def covariate_names(self) -> list[str]:
        return [c.name for c in self.covariates]

    def covariate(self, name: str) -> Optional[CovariatePlan]:
        return next((c for c in self.covariates if c.name == name), None)


class LearnerSpec(BaseModel):
    """Base learner of the stacking library"""
    kind: LearnerKind
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("kind")
    @classmethod
    def not_stacked(cls, v: LearnerKind) -> LearnerKind:
        if v == LearnerKind.STACKED:
            raise ValueError("stacked models cannot be nested in a stacking library")
        return v


def default_library() -> list[LearnerSpec]:
    return [
        LearnerSpec(kind=LearnerKind.LASSO),
        LearnerSpec(kind=LearnerKind.FOREST, params={"n_trees": 100}),
        LearnerSpec(kind=LearnerKind.BOOSTING, params={"n_rounds": 200}),
    ]


class LearnerConfig(BaseModel):
    library: list[LearnerSpec] = Field(default_factory=default_library, min_length=1, max_length=12)
    cv_folds: int = Field(5, ge=2)


class DatasetOptions(BaseModel):
    min_frac: float = Field(default_factory=lambda: settings.SPARSE_LEVEL_MIN_FRAC, gt=0.0, lt=0.5)
    max_dominance: float = Field(default_factory=lambda: settings.DOMINANCE_MAX, gt=0.0, le=1.0)
    missing_indicators: bool = False


class ImportanceOptions(BaseModel):
    mtry: Optional[int] = Field(None, ge=1)
    alpha: float = Field(0.05, gt=0.0, le=1.0)
    min_leaf: int = Field(7, ge=1)
    max_depth: Optional[int] = Field(None, ge=1)
    n_repeats: int = Field(5, ge=1)
    top_k: int = Field(10, ge=1)
    grid_size: int = Field(20, ge=2)
    bootstrap_trees: int = Field(100, ge=1)
    pd_covariates: int = Field(3, ge=0)


class DisplayOptions(BaseModel):
    df: int = Field(4, ge=1)
    span: float = Field(0.75, gt=0.0, le=1.0)
    n_grid: int = Field(50, ge=2)
    n_covariates: int = Field(3, ge=0)


class SensitivitySlot(BaseModel):
    """User-driven rerun whose findings are compared with the main analysis"""
    label: str
    findings: str
    description: Optional[str] = None


class RunConfig(BaseModel):
    data: str
    plan: AnalysisPlan
    dataset: DatasetOptions = Field(default_factory=DatasetOptions)
    learners: LearnerConfig = Field(default_factory=LearnerConfig)
    importance: ImportanceOptions = Field(default_factory=ImportanceOptions)
    displays: DisplayOptions = Field(default_factory=DisplayOptions)
    clip_epsilon: float = Field(default_factory=lambda: settings.PROPENSITY_CLIP, gt=0.0, lt=0.5)
    sensitivity: list[SensitivitySlot] = Field(default_factory=list)

    # set by from_file, relative paths in the file resolve against it
    base_dir: Optional[str] = Field(None, exclude=True)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        data = read_json(path)
        try:
            config = cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"invalid run configuration {path}: {e}") from e
        config.base_dir = str(Path(path).resolve().parent)
        return config

    def resolve(self, relative: str) -> Path:
        p = Path(relative)
        if p.is_absolute() or self.base_dir is None:
            return p
        return Path(self.base_dir) / p

    @property
    def data_path(self) -> Path:
        return self.resolve(self.data)

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        try:
            plan = AnalysisPlan.model_validate({**self.plan.model_dump(), "seed": seed})
        except ValidationError as e:
            raise ConfigError(f"invalid seed override {seed}: {e}") from e
        updated = self.model_copy(update={"plan": plan})
        updated.base_dir = self.base_dir
        return updated


def read_json(path: Union[str, Path]) -> Any:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"configuration file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"configuration file {path} is not valid JSON: {e}") from e
