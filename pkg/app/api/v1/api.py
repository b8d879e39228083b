from fastapi import APIRouter

from app.api.v1.endpoints import analyses, hettest, simulations

api_router = APIRouter()

api_router.include_router(analyses.router, prefix="/analyses", tags=["analyses"])
api_router.include_router(simulations.router, prefix="/simulations", tags=["simulations"])
api_router.include_router(hettest.router, prefix="/hettest", tags=["hettest"])
