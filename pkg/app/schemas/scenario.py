from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, model_validator

from app.core.errors import ConfigError
from app.schemas.plan import read_json


class NormalMarginal(BaseModel):
    kind: Literal["normal"] = "normal"
    mean: float = 0.0
    sd: float = Field(1.0, gt=0.0)


class LevelsMarginal(BaseModel):
    """Categorical covariate cut from the latent normal at its cumulative probabilities"""
    kind: Literal["levels"] = "levels"
    levels: list[str] = Field(..., min_length=2)
    probs: list[float]

    @model_validator(mode="after")
    def check_probs(self) -> "LevelsMarginal":
        if len(set(self.levels)) != len(self.levels):
            raise ValueError("marginal levels must be unique")
        if len(self.probs) != len(self.levels):
            raise ValueError("marginal needs one probability per level")
        if any(p <= 0.0 for p in self.probs) or abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("marginal probabilities must be positive and sum to 1")
        return self


Marginal = Annotated[Union[NormalMarginal, LevelsMarginal], Field(discriminator="kind")]


class SubgroupHeterogeneous(BaseModel):
    """tau(x) = -0.105 + 0.725 * 1{X14 > 0.25} * 1{X1 = 'N'}"""
    kind: Literal["subgroup"] = "subgroup"


class Homogeneous(BaseModel):
    kind: Literal["homogeneous"] = "homogeneous"
    tau0: float = 0.0


Effect = Annotated[Union[SubgroupHeterogeneous, Homogeneous], Field(discriminator="kind")]

# covariates entering the outcome model
EFFECT_MODIFIER = "X1"
EFFECT_THRESHOLD_COVARIATE = "X14"
PROGNOSTIC_COVARIATE = "X17"


def default_marginals() -> dict[str, Marginal]:
    return {
        "X1": LevelsMarginal(levels=["Y", "N"], probs=[0.5, 0.5]),
        "X2": LevelsMarginal(levels=["F", "M"], probs=[0.5, 0.5]),
        "X5": LevelsMarginal(levels=["low", "mid", "high"], probs=[0.3, 0.4, 0.3]),
        "X9": LevelsMarginal(levels=["Y", "N"], probs=[0.7, 0.3]),
        "X12": LevelsMarginal(levels=["A", "B", "C", "D"], probs=[0.4, 0.3, 0.2, 0.1]),
    }


class ScenarioSpec(BaseModel):
    """Synthetic two-arm trial with known treatment effects"""
    n: int = Field(500, ge=1)
    p: int = Field(30, ge=1)
    seed: int = Field(20240101, ge=0, lt=2**64)
    effect: Effect = Field(default_factory=SubgroupHeterogeneous)
    marginals: dict[str, Marginal] = Field(
        default_factory=dict,
        description="Per-covariate overrides of the default marginals (X1, X2, X5, X9, X12 "
                    "categorical, all others standard normal)",
    )
    rho: float = Field(0.2, description="Exchangeable latent correlation, used without `correlation`")
    correlation: Optional[list[list[float]]] = None
    treatment_prob: float = Field(0.5, gt=0.0, lt=1.0)
    block_size: int = Field(4096, ge=1)

    @model_validator(mode="after")
    def check_scenario(self) -> "ScenarioSpec":
        names = set(self.names)
        unknown = sorted(set(self.marginals) - names)
        if unknown:
            raise ValueError(f"marginals given for unknown covariates {unknown}")
        if self.correlation is not None:
            if len(self.correlation) != self.p or any(len(row) != self.p for row in self.correlation):
                raise ValueError(f"correlation must be a {self.p}x{self.p} matrix")
            for i in range(self.p):
                if abs(self.correlation[i][i] - 1.0) > 1e-12:
                    raise ValueError("correlation must have a unit diagonal")
                for j in range(i):
                    if abs(self.correlation[i][j] - self.correlation[j][i]) > 1e-12:
                        raise ValueError("correlation must be symmetric")
        if isinstance(self.effect, SubgroupHeterogeneous):
            if self.p < 17:
                raise ValueError("the heterogeneous effect model needs at least 17 covariates")
            x1 = self.marginal(EFFECT_MODIFIER)
            if not isinstance(x1, LevelsMarginal) or sorted(x1.levels) != ["N", "Y"]:
                raise ValueError("X1 must be categorical with levels Y and N")
            for name in (EFFECT_THRESHOLD_COVARIATE, PROGNOSTIC_COVARIATE):
                if not isinstance(self.marginal(name), NormalMarginal):
                    raise ValueError(f"{name} must be continuous")
        return self

    @property
    def names(self) -> list[str]:
        return [f"X{j}" for j in range(1, self.p + 1)]

    def marginal(self, name: str) -> Marginal:
        if name in self.marginals:
            return self.marginals[name]
        return default_marginals().get(name, NormalMarginal())

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScenarioSpec":
        data = read_json(path)
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"invalid scenario {path}: {e}") from e
