import logging

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    PROJECT_NAME: str = "WATCH Treatment Effect Heterogeneity"
    VERSION: str = "1.0.0"
    API_V1_STR: str = "/api/v1"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        level = v.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"LOG_LEVEL must be a logging level name, got {v}")
        return level

    # Parallelism (results never depend on it)
    N_JOBS: int = 1

    # Outputs
    OUTPUT_DIR: str = "watch_output"
    FIGURE_HASH_SALT: str = "watch"

    # Analysis dataset creation
    SPARSE_LEVEL_MIN_FRAC: float = 0.05
    DOMINANCE_MAX: float = 0.99

    # DR learner
    PROPENSITY_CLIP: float = 0.025

    model_config = SettingsConfigDict(
        case_sensitive=True,
        env_file=".env",
        env_prefix="WATCH_",
        extra="ignore",
    )


settings = Settings()
