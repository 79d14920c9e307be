from fastapi.testclient import TestClient
from sqlalchemy.orm import sessionmaker
from sqlalchemy import create_engine
import numpy as np
import pytest

from src.database.models import Base
from src.database.db import get_db
from src.routes import simulations
from src.services.materials import BeamConfig, junction_stack
from src.services.psf import analytic_kernel_set
from src.services.transport import (
    EVENT_DTYPE, EXIT_DTYPE, DepositionRecord, DepositionSummary
)
from main import app

SQLALCHEMY_DATABASE_URL = "sqlite:///./test.db"

engine = create_engine(
    SQLALCHEMY_DATABASE_URL, connect_args={"check_same_thread": False}
)
TestingSessionLocal = sessionmaker(
    autocommit=False, autoflush=False, bind=engine
)


@pytest.fixture(scope='module')
def session():
    Base.metadata.drop_all(bind=engine)
    Base.metadata.create_all(bind=engine)

    db = TestingSessionLocal()
    try:
        yield db
    finally:
        db.close()


@pytest.fixture(scope='module')
def client(session):
    def override_get_db():
        try:
            yield session
        finally:
            session.close()
    # test database instead of the run registry
    app.dependency_overrides[get_db] = override_get_db
    simulations.RegistrySession = TestingSessionLocal
    yield TestClient(app)


@pytest.fixture(scope='session')
def stack():
    return junction_stack()


@pytest.fixture(scope='session')
def small_beam():
    return BeamConfig(energy=10.0, beam_radius=0.0, trajectory_count=60, seed=11)


@pytest.fixture(scope='session')
def kernels():
    """Analytic kernel set small enough for fast convolutions."""
    return analytic_kernel_set(pitch=20.0, half_width=1500.0)


def make_record(points, channels=None, trajectories=1, layers=(('PMMA', 230.0), ('MMA', 500.0)),
                exits=None) -> DepositionRecord:
    """Deposition record from (x, y, z, energy) tuples."""
    events = np.zeros(len(points), EVENT_DTYPE)
    if len(points):
        data = np.asarray(points, dtype=float)
        events['x'], events['y'], events['z'], events['energy'] = data.T
    if channels is not None:
        events['channel'] = channels
    exit_records = np.zeros(0, EXIT_DTYPE)
    if exits is not None:
        exit_records = np.zeros(len(exits), EXIT_DTYPE)
        data = np.asarray(exits, dtype=float)
        exit_records['theta'], exit_records['energy'], exit_records['radius'] = data.T
    summary = DepositionSummary(
        trajectory_count=trajectories, beam_energy=30_000.0,
        total_deposited=float(events['energy'].sum()),
        exit_count=int(exit_records.size),
        total_exited=float(exit_records['energy'].sum()),
    )
    return DepositionRecord(events, exit_records, summary, tuple(layers), 'Si', 0, {})


@pytest.fixture
def record_factory():
    return make_record
