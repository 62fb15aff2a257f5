"""RunLedger: append-only record of stage runs and throughput measurements."""

import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, event
from sqlalchemy.exc import SQLAlchemyError

from src.utils.errors import PersistenceError
from .base import Base, make_session_factory


class StageRecord(Base):
    """One completed command (generate, train <stage>, attribute, evaluate)."""

    __tablename__ = 'stage_records'

    id = Column(Integer, primary_key=True, autoincrement=True)
    stage = Column(String, index=True, nullable=False)
    started_at = Column(DateTime, nullable=False)
    finished_at = Column(DateTime, nullable=False)
    seed = Column(Integer)
    config_hash = Column(String)
    model_hash = Column(String)  # parameter hash of the produced archive, if any
    metrics = Column(Text)  # JSON summary

    @property
    def metrics_dict(self) -> Dict[str, Any]:
        return json.loads(self.metrics) if self.metrics else {}

    def __repr__(self):
        return f"<StageRecord(id={self.id}, stage='{self.stage}', finished_at={self.finished_at})>"


class ThroughputRecord(Base):
    """Maps/second of one method, measured over repeated sweeps."""

    __tablename__ = 'throughput_records'

    id = Column(Integer, primary_key=True, autoincrement=True)
    method = Column(String, index=True, nullable=False)
    recorded_at = Column(DateTime, default=datetime.utcnow, nullable=False)
    n_images = Column(Integer, nullable=False)
    repetitions = Column(Integer, nullable=False)
    total_seconds = Column(Float, nullable=False)
    maps_per_second = Column(Float, nullable=False)
    model_hash = Column(String)

    def __repr__(self):
        return f"<ThroughputRecord(id={self.id}, method='{self.method}', maps_per_second={self.maps_per_second:.1f})>"


def _reject_changes(session, flush_context, instances):
    if session.dirty or session.deleted:
        raise PersistenceError("The run ledger is append-only; updates and deletes are not allowed")


class RunLedger:
    """Per-run SQLite ledger under the output root."""

    def __init__(self, db_path: Path):
        self.db_path = Path(db_path)
        self.engine, self._factory = make_session_factory(self.db_path)

    def _session(self):
        session = self._factory()
        event.listen(session, 'before_flush', _reject_changes)
        return session

    def _append(self, record) -> None:
        session = self._session()
        try:
            session.add(record)
            session.commit()
            session.refresh(record)
            session.expunge(record)
        except SQLAlchemyError as e:
            session.rollback()
            raise PersistenceError(f"Could not append to ledger {self.db_path}: {e}") from e
        finally:
            session.close()

    def record_stage(self, stage: str, started_at: datetime, seed: Optional[int] = None,
                     config_hash: Optional[str] = None, model_hash: Optional[str] = None,
                     metrics: Optional[Dict[str, Any]] = None) -> StageRecord:
        record = StageRecord(
            stage=stage,
            started_at=started_at,
            finished_at=datetime.utcnow(),
            seed=seed,
            config_hash=config_hash,
            model_hash=model_hash,
            metrics=json.dumps(metrics or {}, sort_keys=True, default=float),
        )
        self._append(record)
        return record

    def record_throughput(self, method: str, n_images: int, repetitions: int, total_seconds: float,
                          maps_per_second: float, model_hash: Optional[str] = None) -> ThroughputRecord:
        record = ThroughputRecord(
            method=method,
            n_images=n_images,
            repetitions=repetitions,
            total_seconds=total_seconds,
            maps_per_second=maps_per_second,
            model_hash=model_hash,
        )
        self._append(record)
        return record

    def stages(self, stage: Optional[str] = None) -> List[StageRecord]:
        session = self._factory()
        try:
            query = session.query(StageRecord)
            if stage:
                query = query.filter(StageRecord.stage == stage)
            records = query.order_by(StageRecord.id).all()
            session.expunge_all()
            return records
        finally:
            session.close()

    def throughputs(self) -> List[ThroughputRecord]:
        session = self._factory()
        try:
            records = session.query(ThroughputRecord).order_by(ThroughputRecord.id).all()
            session.expunge_all()
            return records
        finally:
            session.close()
