from typing import Optional

from pydantic import BaseModel, Field, model_validator

from app.schemas.scenario import ScenarioSpec


class AnalysisRequest(BaseModel):
    config: str = Field(..., description="Path of the run configuration JSON")
    out_dir: Optional[str] = Field(None, description="Defaults to WATCH_OUTPUT_DIR")
    seed: Optional[int] = Field(None, ge=0, lt=2**64)


class SimulationRequest(BaseModel):
    scenario_path: Optional[str] = Field(None, description="Scenario JSON file")
    scenario: Optional[ScenarioSpec] = Field(None, description="Inline scenario, used when no file is given")
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def one_source(self) -> "SimulationRequest":
        if self.scenario_path is not None and self.scenario is not None:
            raise ValueError("give either scenario_path or scenario, not both")
        return self


class SimulationResponse(BaseModel):
    trial: str
    truth: str
    n: int
    n_treated: int
    mean_tau: float
