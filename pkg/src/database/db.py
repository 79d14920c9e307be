from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from src.conf.config import settings

REGISTRY_URL = settings.sqlalchemy_database_url

# background simulation tasks run in other threads
connect_args = {'check_same_thread': False} if REGISTRY_URL.startswith('sqlite') else {}
engine = create_engine(REGISTRY_URL, connect_args=connect_args)

RegistrySession = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def get_db():
    """
    The get_db function opens a session on the run registry for one request
    and closes it afterwards.

    :return: A database session
    """
    db = RegistrySession()
    try:
        yield db
    finally:
        db.close()
