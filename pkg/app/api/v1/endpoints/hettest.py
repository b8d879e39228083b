from fastapi import APIRouter, Query

from app.schemas.hettest import VerbalEvidence
from app.services.hettest import verbal_evidence

router = APIRouter()


@router.get("/verbal", response_model=VerbalEvidence)
def verbal(p: float = Query(..., gt=0.0, le=1.0, description="p-value of the global test")):
    """
    Surprise value and verbal category of a p-value
    """
    return verbal_evidence(p)
