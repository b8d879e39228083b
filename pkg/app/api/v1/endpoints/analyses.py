from fastapi import APIRouter

from app.core.deps import http_errors, load_run_config, output_dir
from app.schemas.findings import FindingsReport
from app.schemas.ida import IdaReport
from app.schemas.requests import AnalysisRequest
from app.services import pipeline

router = APIRouter()


@router.post("/ida", response_model=IdaReport)
def run_ida(body: AnalysisRequest):
    """
    Initial data analysis of the configured dataset; writes ida_report.json and figures
    """
    with http_errors():
        return pipeline.run_ida(load_run_config(body), output_dir(body.out_dir))


@router.post("/findings", response_model=FindingsReport)
def run_findings(body: AnalysisRequest):
    """
    Full analysis: pseudo-outcomes, global test, importance, displays and the findings report
    """
    with http_errors():
        return pipeline.run_analyze(load_run_config(body), output_dir(body.out_dir))
