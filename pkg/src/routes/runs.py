from typing import List, Optional

from fastapi import APIRouter, Depends, Query, status
from sqlalchemy.orm import Session

from src.database.db import get_db
from src.repository import runs as repository_runs
from src.schemas import RunResponse

router = APIRouter(prefix='/runs', tags=['runs'])


@router.get('/', response_model=List[RunResponse])
async def get_runs(
    skip: int = Query(0, ge=0),
    limit: int = Query(100, le=100),
    command: Optional[str] = Query(None),
    db: Session = Depends(get_db)
) -> List[RunResponse]:
    """
    The get_runs function lists the registered runs, newest first.

    :param skip: Skip a certain amount of runs
    :param limit: Limit the number of runs returned
    :param command: Only runs of this command
    :param db: Pass the database session to the repository layer
    :return: A list of RunResponse objects
    """
    return await repository_runs.get_runs(skip, limit, db, command)


@router.get('/{run_id}', response_model=RunResponse)
async def get_run(run_id: int, db: Session = Depends(get_db)) -> RunResponse:
    """
    The get_run function returns one run.

    :param run_id: Id of the run
    :param db: Pass the database session to the repository layer
    :return: A RunResponse object
    """
    return await repository_runs.get_run(run_id, db)


@router.delete('/{run_id}', response_model=RunResponse, status_code=status.HTTP_200_OK)
async def delete_run(run_id: int, db: Session = Depends(get_db)) -> RunResponse:
    """
    The delete_run function removes a run from the registry; its files stay
    on disk.

    :param run_id: Id of the run
    :param db: Pass the database session to the repository layer
    :return: The deleted run
    """
    return await repository_runs.delete_run(run_id, db)
