"""
Line-delimited JSON record file with crash-safe resume and in-order writes.
"""

import json
import os
from pathlib import Path
from typing import Dict, Iterable, List

from utils.error_handler import EvaluationError
from utils.logger import eval_logger as logger


class RecordStore:
    """One JSON object per line, keyed by `sample_id`"""

    def __init__(self, path):
        self.path = Path(path)

    def exists(self) -> bool:
        return self.path.exists()

    def reset(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding='utf-8')

    def repair(self) -> int:
        """Drop a trailing partial line left by an interrupted write; returns bytes removed"""
        if not self.path.exists():
            return 0
        data = self.path.read_bytes()
        if not data or data.endswith(b"\n"):
            return 0
        keep = data.rfind(b"\n") + 1
        with open(self.path, 'r+b') as f:
            f.truncate(keep)
        removed = len(data) - keep
        logger.warning(f"Truncated a partial record ({removed} bytes) at the end of {self.path}")
        return removed

    def load(self) -> List[Dict]:
        """All complete records in file order"""
        if not self.path.exists():
            return []
        records = []
        with open(self.path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, start=1):
                if not line.endswith("\n"):
                    break
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise EvaluationError(f"{self.path}:{line_no}: corrupt record ({e})")
        return records

    def completed_ids(self) -> set:
        return {record['sample_id'] for record in self.load()}

    def append(self, record: Dict):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, 'a', encoding='utf-8') as f:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
            f.flush()
            os.fsync(f.fileno())


class OrderedRecordWriter:
    """
    Single writer with a reorder buffer: records arrive in completion order and are
    appended in the order of `expected_ids`.
    """

    def __init__(self, store: RecordStore, expected_ids: Iterable[int]):
        self.store = store
        self.expected = list(expected_ids)
        self._next = 0
        self._buffer: Dict[int, Dict] = {}
        self.written = 0

    @property
    def pending(self) -> int:
        return len(self._buffer)

    def add(self, record: Dict):
        sample_id = record['sample_id']
        if sample_id in self._buffer:
            raise EvaluationError(f"Duplicate record for sample {sample_id}")
        self._buffer[sample_id] = record
        while self._next < len(self.expected) and self.expected[self._next] in self._buffer:
            self.store.append(self._buffer.pop(self.expected[self._next]))
            self._next += 1
            self.written += 1
