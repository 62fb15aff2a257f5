"""Database models for the run ledger."""

from .base import Base, make_session_factory
from .ledger import RunLedger, StageRecord, ThroughputRecord

__all__ = [
    'Base',
    'make_session_factory',
    'RunLedger',
    'StageRecord',
    'ThroughputRecord',
]
