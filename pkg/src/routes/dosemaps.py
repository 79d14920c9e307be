from fastapi import APIRouter, Depends
from pydantic import ValidationError
from sqlalchemy.orm import Session
from starlette.concurrency import run_in_threadpool

from src.database.db import get_db
from src.repository import runs as repository_runs
from src.schemas import DosemapRequest, DosemapResponse
from src.services.errors import EblError, to_http_exception
from src.services.formats import config_hash
from src.services.geometry import build_geometry
from src.services.pipeline import dosemap, json_safe, kernel_options, resolve_kernels

router = APIRouter(prefix='/dosemaps', tags=['dosemaps'])


def compute_dosemap(body: DosemapRequest) -> dict:
    layout, _ = build_geometry(body.geometry, body.params)
    kernels = resolve_kernels(kernel_options(**body.kernel.model_dump()))
    grids, metrics = dosemap(layout, kernels)
    return {'geometry': body.geometry, 'grid': list(grids['total'].shape),
            'metrics': json_safe(metrics.as_dict())}


@router.post('/', response_model=DosemapResponse)
async def create_dosemap(
    body: DosemapRequest,
    db: Session = Depends(get_db)
) -> DosemapResponse:
    """
    The create_dosemap function computes the dose map of a built-in
    geometry and returns the bridge metrics. The run is recorded.

    :param body: Geometry, dimensions and kernel
    :param db: Pass the database session to the repository layer
    :return: A DosemapResponse
    """
    try:
        result = await run_in_threadpool(compute_dosemap, body)
    except (EblError, ValidationError) as error:
        raise to_http_exception(error)
    await repository_runs.create_run(
        'dosemap', db, config_hash=config_hash(body.model_dump(mode='json')), status_='done',
        summary=json_safe({**result, 'geometry': body.geometry.value})
    )
    return DosemapResponse(**result)
