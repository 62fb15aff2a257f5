"""Base database configuration and session management."""

from pathlib import Path
import sys

from sqlalchemy import create_engine
from sqlalchemy.ext.declarative import declarative_base
from sqlalchemy.orm import sessionmaker

# Add parent directory to path for imports
sys.path.append(str(Path(__file__).parent.parent.parent))

from src.utils.errors import PersistenceError

LEDGER_NAME = 'ledger.db'

# Create declarative base
Base = declarative_base()


def make_session_factory(db_path: Path, echo: bool = False):
    """Engine + session factory for one run's SQLite ledger (tables created on first use)."""
    db_path = Path(db_path)
    try:
        db_path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise PersistenceError(f"Ledger directory {db_path.parent} is not writable: {e}") from e

    engine = create_engine(
        f"sqlite:///{db_path}",
        echo=echo,
        connect_args={"check_same_thread": False}
    )
    Base.metadata.create_all(bind=engine)
    return engine, sessionmaker(autocommit=False, autoflush=False, bind=engine)
