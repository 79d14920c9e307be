import logging
from pathlib import Path

from fastapi import APIRouter, BackgroundTasks, Depends, status
from pydantic import ValidationError
from sqlalchemy.orm import Session
from starlette.concurrency import run_in_threadpool

from src.conf.config import settings
from src.database.db import RegistrySession, get_db
from src.repository import runs as repository_runs
from src.schemas import RunConfig, RunResponse, SimulationRequest
from src.services.errors import EblError
from src.services.formats import config_hash
from src.services.pipeline import cmd_simulate, json_safe

logger = logging.getLogger(__name__)

router = APIRouter(prefix='/simulations', tags=['simulations'])


async def execute_simulation(run_id: int, body: SimulationRequest, output_dir: str) -> None:
    """
    The execute_simulation function runs a queued simulation and records
    its outcome on the run. It opens its own registry session because the
    request session is closed once the response is sent.

    :param run_id: Id of the registered run
    :param body: Simulation request
    :param output_dir: Directory receiving the files
    :return: None
    """
    db = RegistrySession()
    try:
        await repository_runs.update_run_status(run_id, 'running', db)
        try:
            config = RunConfig(output_dir=Path(output_dir), threads=body.threads)
            result = await run_in_threadpool(cmd_simulate, config, body.stack)
        except (EblError, ValidationError, OSError) as error:
            logger.error('run %d failed: %s', run_id, error)
            await repository_runs.update_run_status(run_id, 'failed', db, error=str(error))
            return
        await repository_runs.update_run_status(run_id, 'done', db,
                                                summary=json_safe(result.as_dict()))
    finally:
        db.close()


@router.post('/', response_model=RunResponse, status_code=status.HTTP_202_ACCEPTED)
async def create_simulation(
    body: SimulationRequest,
    background_tasks: BackgroundTasks,
    db: Session = Depends(get_db)
) -> RunResponse:
    """
    The create_simulation function registers a Monte Carlo run and starts it
    in the background.

    :param body: Stack, beam and thread count
    :param background_tasks: Background task queue of the request
    :param db: Pass the database session to the repository layer
    :return: The queued run
    """
    run = await repository_runs.create_run(
        'simulate', db,
        config_hash=config_hash(body.stack.model_dump(mode='json')),
        seed=body.stack.beam.seed,
    )
    output_dir = str(Path(settings.output_dir) / f'run-{run.id}')
    run.output_dir = output_dir
    db.commit()
    db.refresh(run)
    background_tasks.add_task(execute_simulation, run.id, body, output_dir)
    return run
