from fastapi import APIRouter

from app.core.deps import http_errors, output_dir
from app.schemas.requests import SimulationRequest, SimulationResponse
from app.schemas.scenario import ScenarioSpec
from app.services import pipeline

router = APIRouter()


@router.post("", response_model=SimulationResponse)
def simulate(body: SimulationRequest):
    """
    Generate a simulated trial with known treatment effects into trial.csv and truth.csv
    """
    with http_errors():
        if body.scenario_path is not None:
            spec = ScenarioSpec.from_file(body.scenario_path)
        else:
            spec = body.scenario or ScenarioSpec()
        out = output_dir(body.out_dir)
        trial = pipeline.run_simulate(spec, out)
    return SimulationResponse(
        trial=str(out / "trial.csv"),
        truth=str(out / "truth.csv"),
        n=spec.n,
        n_treated=int(trial.dataset.treatment.sum()),
        mean_tau=float(trial.tau.mean()),
    )
