from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Union

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

# Base class cho các models
Base = declarative_base()

# One SQLite file per run directory
RECORDS_FILENAME = "records.db"


def records_url(run_dir: Union[str, Path]) -> str:
    return f"sqlite:///{Path(run_dir) / RECORDS_FILENAME}"


def create_records_engine(run_dir: Union[str, Path]) -> Engine:
    """Engine for a run's records file; tables are created on first use"""
    # Import models so their tables are registered on Base.metadata
    from app.models import session_record, run_record  # noqa: F401

    Path(run_dir).mkdir(parents=True, exist_ok=True)
    engine = create_engine(records_url(run_dir), future=True)
    Base.metadata.create_all(bind=engine)
    return engine


@contextmanager
def get_db(run_dir: Union[str, Path]) -> Iterator[Session]:
    """Session bound to ``run_dir/records.db``; commits on success"""
    engine = create_records_engine(run_dir)
    SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    db = SessionLocal()
    try:
        yield db
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        db.close()
        engine.dispose()
