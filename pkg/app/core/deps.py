import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from fastapi import HTTPException, status

from app.core.config import settings
from app.core.errors import ConfigError, DataError, WatchError
from app.schemas.plan import RunConfig
from app.schemas.requests import AnalysisRequest

logger = logging.getLogger(__name__)


@contextmanager
def http_errors() -> Iterator[None]:
    """Map workflow errors onto HTTP statuses"""
    try:
        yield
    except ConfigError as e:
        logger.warning(f"Rejected configuration: {e}")
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(e))
    except DataError as e:
        logger.warning(f"Rejected data: {e}")
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    except (WatchError, ValueError) as e:
        logger.error(f"Request failed: {type(e).__name__}: {e}")
        raise HTTPException(status_code=status.HTTP_500_INTERNAL_SERVER_ERROR, detail=str(e))


def load_run_config(body: AnalysisRequest) -> RunConfig:
    config = RunConfig.from_file(body.config)
    return config.with_seed(body.seed) if body.seed is not None else config


def output_dir(requested: Optional[str]) -> Path:
    return Path(requested or settings.OUTPUT_DIR)
