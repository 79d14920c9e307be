from contextlib import asynccontextmanager

from fastapi import FastAPI
import uvicorn

from src.conf.config import TOOL_VERSION, configure_logging
from src.database.models import init_registry
from src.routes import dosemaps, pec, runs, simulations, sweeps


@asynccontextmanager
async def lifespan(app: FastAPI):
    """
    The lifespan function configures logging and creates the run registry
    tables before the service starts answering requests.

    :param app: Pass the fastapi instance to the function
    :return: Nothing; control returns to the application
    """
    configure_logging()
    init_registry()
    yield


app = FastAPI(lifespan=lifespan, title='ebl-dose', version=TOOL_VERSION)

app.include_router(simulations.router, prefix='/api')
app.include_router(dosemaps.router, prefix='/api')
app.include_router(pec.router, prefix='/api')
app.include_router(sweeps.router, prefix='/api')
app.include_router(runs.router, prefix='/api')


@app.get('/')
def read_root():
    """
    The read_root function returns the service banner.

    :return: A dictionary
    """
    return {'message': 'E-beam lithography dose simulation API', 'version': TOOL_VERSION}


if __name__ == '__main__':
    uvicorn.run(
        app='main:app',
        host='0.0.0.0',
        port=8000,
        reload=True
    )
