"""
Synthetic two-arm trials with known treatment effects.

Covariates come from a Gaussian copula: correlated standard normals mapped to normal
marginals or cut into levels at the quantiles of the level probabilities. Outcomes
follow

    mu(x, a) = 1.38 * (1{X1 = 'N'} - 0.5 * X17) + a * tau(x)

with one standard-normal noise draw shared by both potential outcomes of a row.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import norm

from app.core.config import settings
from app.core.errors import ConfigError
from app.core.rng import stream
from app.models.dataset import TREATMENT_LEVELS, Column, Dataset, Roles
from app.schemas.scenario import (
    EFFECT_MODIFIER,
    EFFECT_THRESHOLD_COVARIATE,
    PROGNOSTIC_COVARIATE,
    Homogeneous,
    LevelsMarginal,
    NormalMarginal,
    ScenarioSpec,
)
from app.services.cate import OracleNuisances

logger = logging.getLogger(__name__)

OUTCOME = "Y"
TREATMENT = "A"
PROGNOSTIC_WEIGHT = 1.38
BASE_EFFECT = -0.105
SUBGROUP_EFFECT = 0.725
EFFECT_THRESHOLD = 0.25
MODIFIER_LEVEL = "N"


@dataclass(frozen=True)
class GeneratedTrial:
    dataset: Dataset
    tau: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    treatment_prob: float

    def oracle(self) -> OracleNuisances:
        """True nuisance values for the pseudo-outcome truth-injection hook"""
        return OracleNuisances(mu0=self.mu0, mu1=self.mu1, pi=np.full(self.tau.size, self.treatment_prob))

    def truth_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "row_id": np.arange(self.tau.size),
            "tau_true": self.tau,
            "y0": self.y0,
            "y1": self.y1,
            "mu0": self.mu0,
            "mu1": self.mu1,
        })

    def write(self, out_dir: Union[str, Path]) -> tuple[Path, Path]:
        """trial.csv (readable by load_csv) and the truth.csv sidecar"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        trial_path, truth_path = out_dir / "trial.csv", out_dir / "truth.csv"
        self.dataset.to_frame().to_csv(trial_path, index=False, float_format="%.17g", lineterminator="\n")
        self.truth_frame().to_csv(truth_path, index=False, float_format="%.17g", lineterminator="\n")
        logger.info(f"Wrote {self.tau.size} simulated rows to {trial_path}")
        return trial_path, truth_path


def correlation_matrix(spec: ScenarioSpec) -> np.ndarray:
    if spec.correlation is not None:
        return np.asarray(spec.correlation, dtype=float)
    c = np.full((spec.p, spec.p), spec.rho)
    np.fill_diagonal(c, 1.0)
    return c


def copula_factor(c: np.ndarray) -> np.ndarray:
    """L with L L' = c; fails for a matrix that is not positive semidefinite"""
    eigenvalues, eigenvectors = np.linalg.eigh(c)
    if eigenvalues.min() < -1e-10 * max(1.0, float(np.abs(eigenvalues).max())):
        raise ConfigError(f"copula correlation is not positive semidefinite (min eigenvalue {eigenvalues.min():.3g})")
    return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def _block(spec: ScenarioSpec, factor: np.ndarray, b: int, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = stream(spec.seed, "block", b)
    latent = rng.standard_normal((size, spec.p)) @ factor.T
    a = (rng.random(size) < spec.treatment_prob).astype(np.int64)
    noise = rng.standard_normal(size)
    return latent, a, noise


def _marginal_column(name: str, marginal: Union[NormalMarginal, LevelsMarginal], z: np.ndarray) -> Column:
    if isinstance(marginal, NormalMarginal):
        return Column.continuous(name, marginal.mean + marginal.sd * z)
    cuts = norm.ppf(np.cumsum(marginal.probs)[:-1])
    codes = np.searchsorted(cuts, z, side="left")
    return Column.categorical(name, [marginal.levels[c] for c in codes], levels=marginal.levels)


def _modifier(column: Column) -> np.ndarray:
    if not column.is_categorical or MODIFIER_LEVEL not in column.levels:
        return np.zeros(column.n)
    return (column.codes() == column.levels.index(MODIFIER_LEVEL)).astype(float)


def _tau(spec: ScenarioSpec, columns: Mapping[str, Column]) -> np.ndarray:
    n = next(iter(columns.values())).n
    if isinstance(spec.effect, Homogeneous):
        return np.full(n, spec.effect.tau0)
    subgroup = _modifier(columns[EFFECT_MODIFIER]) * (columns[EFFECT_THRESHOLD_COVARIATE].values > EFFECT_THRESHOLD)
    return BASE_EFFECT + SUBGROUP_EFFECT * subgroup


def _prognostic(columns: Mapping[str, Column], n: int) -> np.ndarray:
    modifier = _modifier(columns[EFFECT_MODIFIER]) if EFFECT_MODIFIER in columns else np.zeros(n)
    prognostic = columns.get(PROGNOSTIC_COVARIATE)
    x17 = prognostic.values if prognostic is not None and not prognostic.is_categorical else np.zeros(n)
    return PROGNOSTIC_WEIGHT * (modifier - 0.5 * x17)


def generate(spec: ScenarioSpec, n_jobs: Optional[int] = None) -> GeneratedTrial:
    """Draw one trial; row block b uses the stream (seed, "block", b)"""
    factor = copula_factor(correlation_matrix(spec))
    starts = range(0, spec.n, spec.block_size)
    blocks = Parallel(n_jobs=n_jobs or settings.N_JOBS)(
        delayed(_block)(spec, factor, b, min(spec.block_size, spec.n - s)) for b, s in enumerate(starts)
    )
    latent = np.concatenate([blk[0] for blk in blocks])
    a = np.concatenate([blk[1] for blk in blocks])
    noise = np.concatenate([blk[2] for blk in blocks])

    covariates = {name: _marginal_column(name, spec.marginal(name), latent[:, j]) for j, name in enumerate(spec.names)}
    tau = _tau(spec, covariates)
    mu0 = _prognostic(covariates, spec.n)
    mu1 = mu0 + tau
    y0, y1 = mu0 + noise, mu1 + noise
    y = np.where(a == 1, y1, y0)

    dataset = Dataset(
        columns=(
            Column.continuous(OUTCOME, y),
            Column.categorical(TREATMENT, [TREATMENT_LEVELS[v] for v in a], levels=TREATMENT_LEVELS),
            *covariates.values(),
        ),
        roles=Roles(OUTCOME, TREATMENT, tuple(spec.names)),
    )
    logger.info(
        f"Generated {spec.n} rows ({int(a.sum())} treated), effect {spec.effect.kind}, "
        f"mean true effect {tau.mean():.4f}"
    )
    return GeneratedTrial(dataset=dataset, tau=tau, y0=y0, y1=y1, mu0=mu0, mu1=mu1,
                          treatment_prob=spec.treatment_prob)


def true_cate(spec: ScenarioSpec, x: Mapping[str, Any]) -> float:
    """Noise-free treatment effect for one covariate row given by name"""
    if isinstance(spec.effect, Homogeneous):
        return float(spec.effect.tau0)
    in_subgroup = x[EFFECT_MODIFIER] == MODIFIER_LEVEL and float(x[EFFECT_THRESHOLD_COVARIATE]) > EFFECT_THRESHOLD
    return BASE_EFFECT + SUBGROUP_EFFECT * float(in_subgroup)
