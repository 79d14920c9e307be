from datetime import datetime

from sqlalchemy import JSON, String, Text, func
from sqlalchemy.orm import Mapped, mapped_column, declarative_base
from sqlalchemy.sql.sqltypes import DateTime

from src.database.db import engine

Base = declarative_base()


class Run(Base):
    """
    The Run class records one pipeline command executed through the service.
    """
    __tablename__ = 'runs'
    id: Mapped[int] = mapped_column(primary_key=True)
    command: Mapped[str] = mapped_column(String(32), nullable=False)
    status: Mapped[str] = mapped_column(String(16), nullable=False, default='queued')
    config_hash: Mapped[str | None] = mapped_column(String(64))
    seed: Mapped[int | None]
    output_dir: Mapped[str | None] = mapped_column(String(255))
    summary: Mapped[dict | None] = mapped_column(JSON)
    error: Mapped[str | None] = mapped_column(Text)
    created_at: Mapped[datetime] = mapped_column(DateTime, default=func.now())


def init_registry() -> None:
    """Create the registry tables that do not exist yet."""
    Base.metadata.create_all(engine)
