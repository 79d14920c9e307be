from typing import List, Optional

from fastapi import HTTPException, status
from sqlalchemy.orm import Session

from src.database.models import Run
from src.schemas import RunResponse


def raise_run_not_found():
    """
    The raise_run_not_found function raises a 404 Not Found error with the
    message 'Run not found'.

    :return: Never returns
    """
    raise HTTPException(
        status_code=status.HTTP_404_NOT_FOUND,
        detail='Run not found'
    )


async def create_run(
    command: str,
    db: Session,
    config_hash: Optional[str] = None,
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
    status_: str = 'queued',
    summary: Optional[dict] = None,
) -> Run:
    """
    The create_run function registers a new run.

    :param command: Pipeline command name
    :param db: Pass the database session to the function
    :param config_hash: Hash of the validated configuration
    :param seed: Random seed of the run, if any
    :param output_dir: Directory receiving the run's files
    :param status_: Initial status
    :param summary: Summary of a run finished on creation
    :return: The new Run
    """
    run = Run(command=command, status=status_, config_hash=config_hash,
              seed=seed, output_dir=output_dir, summary=summary)
    db.add(run)
    db.commit()
    db.refresh(run)
    return run


async def get_run(run_id: int, db: Session) -> Run:
    """
    The get_run function returns one run by id.

    :param run_id: Id of the run
    :param db: Pass the database session to the function
    :return: The Run; raises 404 when it does not exist
    """
    run = db.query(Run).filter(Run.id == run_id).first()
    if run is None:
        raise_run_not_found()
    return run


async def get_runs(
    skip: int,
    limit: int,
    db: Session,
    command: Optional[str] = None,
) -> List[Run]:
    """
    The get_runs function lists runs, newest first.

    :param skip: Skip the first n runs
    :param limit: Limit the number of runs returned
    :param db: Pass the database session to the function
    :param command: Only runs of this command
    :return: A list of runs
    """
    query = db.query(Run)
    if command:
        query = query.filter(Run.command == command)
    return query.order_by(Run.id.desc()).offset(skip).limit(limit).all()


async def update_run_status(
    run_id: int,
    status_: str,
    db: Session,
    summary: Optional[dict] = None,
    error: Optional[str] = None,
) -> Run:
    """
    The update_run_status function moves a run to a new status and stores
    its summary or error message.

    :param run_id: Id of the run
    :param status_: New status ('running', 'done' or 'failed')
    :param db: Pass the database session to the function
    :param summary: Summary of a finished run
    :param error: Error message of a failed run
    :return: The updated Run
    """
    run = await get_run(run_id, db)
    run.status = status_
    if summary is not None:
        run.summary = summary
    if error is not None:
        run.error = error
    db.commit()
    db.refresh(run)
    return run


async def delete_run(run_id: int, db: Session) -> RunResponse:
    """
    The delete_run function removes a run from the registry. Output files
    are left on disk.

    :param run_id: Id of the run
    :param db: Pass the database session to the function
    :return: Snapshot of the deleted run
    """
    run = await get_run(run_id, db)
    snapshot = RunResponse.model_validate(run)
    db.delete(run)
    db.commit()
    return snapshot
