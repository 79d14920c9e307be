from fastapi import APIRouter, Depends
from pydantic import ValidationError
from sqlalchemy.orm import Session
from starlette.concurrency import run_in_threadpool

from src.database.db import get_db
from src.repository import runs as repository_runs
from src.schemas import RunConfig, SweepEntry, SweepOptions, SweepRequest, SweepResponse
from src.services.errors import EblError, to_http_exception
from src.services.formats import config_hash
from src.services.pipeline import kernel_options, resolve_kernels, run_sweeps

router = APIRouter(prefix='/sweeps', tags=['sweeps'])


def compute_sweeps(body: SweepRequest) -> SweepResponse:
    config = RunConfig(sweep=SweepOptions(
        start=body.start, stop=body.stop, step=body.step,
        geometries=body.geometries, thresholds=body.thresholds,
    ))
    kernels = resolve_kernels(kernel_options(**body.kernel.model_dump()))
    thresholds, results = run_sweeps(config, kernels)
    return SweepResponse(
        thresholds=thresholds,
        results=[
            SweepEntry(
                geometry=result.label,
                doses=result.doses.tolist(),
                states=[s.value for s in result.states],
                window=list(result.window) if result.window else None,
            )
            for result in results
        ],
    )


@router.post('/', response_model=SweepResponse)
async def create_sweep(
    body: SweepRequest,
    db: Session = Depends(get_db)
) -> SweepResponse:
    """
    The create_sweep function classifies the bridge over a dose range for
    each requested geometry. Thresholds are calibrated on the horseshoe
    when the request gives none.

    :param body: Geometries, kernel, thresholds and dose range
    :param db: Pass the database session to the repository layer
    :return: A SweepResponse
    """
    try:
        response = await run_in_threadpool(compute_sweeps, body)
    except (EblError, ValidationError) as error:
        raise to_http_exception(error)
    await repository_runs.create_run(
        'sweep', db, config_hash=config_hash(body.model_dump(mode='json')), status_='done',
        summary=response.model_dump(mode='json')
    )
    return response
