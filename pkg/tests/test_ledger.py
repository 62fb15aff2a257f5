"""Tests for the append-only run ledger."""

import pytest
import sys
from datetime import datetime
from pathlib import Path

sys.path.append(str(Path(__file__).parent.parent))

from src.models import RunLedger, StageRecord, ThroughputRecord
from src.utils.errors import PersistenceError


class TestRunLedger:
    """Test ledger appends and the append-only guard."""

    def setup_method(self):
        """Set up test fixtures."""
        self.started = datetime(2024, 1, 1, 12, 0, 0)

    def test_record_and_query_stages(self, tmp_path):
        """Test stage records come back in insertion order with their metrics."""
        ledger = RunLedger(tmp_path / 'ledger.db')
        ledger.record_stage('generate', self.started, seed=1, config_hash='abc')
        ledger.record_stage('train_classifier', self.started, seed=1, model_hash='h1',
                            metrics={'val_auc': 0.93, 'theta': 0.61})
        stages = ledger.stages()
        assert [s.stage for s in stages] == ['generate', 'train_classifier']
        assert stages[1].metrics_dict == {'theta': 0.61, 'val_auc': 0.93}
        assert stages[1].finished_at >= stages[1].started_at
        assert len(ledger.stages('generate')) == 1
        print("✓ Stage records")

    def test_record_throughput(self, tmp_path):
        """Test throughput records persist."""
        ledger = RunLedger(tmp_path / 'ledger.db')
        ledger.record_throughput('ours', n_images=64, repetitions=10, total_seconds=2.0, maps_per_second=320.0)
        records = ledger.throughputs()
        assert len(records) == 1 and records[0].method == 'ours'
        assert records[0].maps_per_second == pytest.approx(320.0)
        print("✓ Throughput records")

    def test_persists_across_instances(self, tmp_path):
        """Test a second ledger on the same file sees earlier records."""
        RunLedger(tmp_path / 'ledger.db').record_stage('generate', self.started)
        assert len(RunLedger(tmp_path / 'ledger.db').stages()) == 1
        print("✓ Ledger persists")

    def test_updates_rejected(self, tmp_path):
        """Test modifying a stored record is refused."""
        ledger = RunLedger(tmp_path / 'ledger.db')
        ledger.record_stage('generate', self.started, seed=1)
        session = ledger._session()
        try:
            record = session.query(StageRecord).first()
            record.seed = 2
            with pytest.raises(PersistenceError):
                session.commit()
        finally:
            session.rollback()
            session.close()
        assert ledger.stages()[0].seed == 1
        print("✓ Updates rejected")

    def test_deletes_rejected(self, tmp_path):
        """Test deleting a stored record is refused."""
        ledger = RunLedger(tmp_path / 'ledger.db')
        ledger.record_throughput('cam', 4, 10, 0.1, 400.0)
        session = ledger._session()
        try:
            session.delete(session.query(ThroughputRecord).first())
            with pytest.raises(PersistenceError):
                session.commit()
        finally:
            session.rollback()
            session.close()
        assert len(ledger.throughputs()) == 1
        print("✓ Deletes rejected")


if __name__ == '__main__':
    pytest.main([__file__, '-v', '-s'])
