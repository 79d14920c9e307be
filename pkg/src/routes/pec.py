from fastapi import APIRouter, Depends
from pydantic import ValidationError
from sqlalchemy.orm import Session
from starlette.concurrency import run_in_threadpool

from src.database.db import get_db
from src.repository import runs as repository_runs
from src.schemas import PecRequest, PecResponse
from src.services.errors import EblError, to_http_exception
from src.services.formats import config_hash
from src.services.geometry import build_geometry
from src.services.pec import correct
from src.services.pipeline import json_safe, kernel_options, resolve_kernels

router = APIRouter(prefix='/pec', tags=['pec'])


def compute_pec(body: PecRequest) -> PecResponse:
    layout, _ = build_geometry(body.geometry, body.params)
    kernel = resolve_kernels(kernel_options(**body.kernel.model_dump())).total
    target = body.target or layout.base_dose * kernel.integral()
    result = correct(layout, kernel, target, body.tol, body.max_iter)
    return PecResponse(
        factors=result.corrected_layout.factors,
        residual=result.residual,
        iterations=result.iterations,
        converged=result.converged,
        gap_dose=result.gap_dose,
    )


@router.post('/', response_model=PecResponse)
async def create_pec(
    body: PecRequest,
    db: Session = Depends(get_db)
) -> PecResponse:
    """
    The create_pec function corrects the dose factors of a built-in
    geometry.

    :param body: Geometry, kernel, target and iteration limits
    :param db: Pass the database session to the repository layer
    :return: A PecResponse with the corrected factors
    """
    try:
        response = await run_in_threadpool(compute_pec, body)
    except (EblError, ValidationError) as error:
        raise to_http_exception(error)
    await repository_runs.create_run(
        'pec', db, config_hash=config_hash(body.model_dump(mode='json')), status_='done',
        summary=json_safe(response.model_dump(mode='json'))
    )
    return response
