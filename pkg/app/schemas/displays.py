from typing import Optional

from pydantic import BaseModel, Field

from app.models.enums import FigureKind


class ArmSummary(BaseModel):
    n: int
    mean: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None


class GroupEffect(BaseModel):
    """Unadjusted per-group treatment effect with the mean pseudo-outcome of the group"""
    labels: list[str]
    n: int
    control: ArmSummary
    treated: ArmSummary
    effect_defined: bool
    effect: Optional[float] = None
    se: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    pseudo_mean: Optional[float] = None


class Band(BaseModel):
    fit: list[float]
    lower: list[float]
    upper: list[float]


class EffectCurve(BaseModel):
    covariate: str
    grid: list[float]
    control: Band
    treated: Band
    effect: Band
    pseudo_smooth: list[float]
    df: int
    span: float
    stratum: Optional[str] = Field(None, description="Stratum of the second variable in bivariate panels")


class FigureSeries(BaseModel):
    name: str
    x: list[float]
    y: list[Optional[float]]
    lower: Optional[list[Optional[float]]] = None
    upper: Optional[list[Optional[float]]] = None
    style: str = Field("line", description="line, points, stars or bars")


class FigureData(BaseModel):
    """Exact numbers behind one rendered figure"""
    figure_id: str
    kind: FigureKind
    title: str
    x_label: str = ""
    y_label: str = ""
    x_ticks: Optional[list[str]] = Field(None, description="Category labels at x = 0, 1, ...")
    series: list[FigureSeries] = Field(default_factory=list)
    matrix: Optional[list[list[float]]] = None
    row_labels: Optional[list[str]] = None
    col_labels: Optional[list[str]] = None
    annotations: list[str] = Field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not self.series and not self.matrix


class FigureEntry(BaseModel):
    figure_id: str
    kind: FigureKind
    title: str
    svg: str
    data: str


class FigureManifest(BaseModel):
    figures: list[FigureEntry] = Field(default_factory=list)
