"""Crash deduplication and persistence."""

import json
import os
from dataclasses import dataclass

from vpfuzz.coverage import classify_counts, digest


@dataclass(frozen=True)
class CrashRecord:
    input: bytes
    reason: str
    exit_value: int
    coverage_digest: int
    exec_number: int

    @property
    def dedup_key(self):
        return (self.reason, self.coverage_digest)

    def stem(self):
        return f"{self.reason}-{self.coverage_digest:016x}"

    def sidecar(self):
        return {
            "reason": self.reason,
            "exit_value": self.exit_value,
            "coverage_digest": f"{self.coverage_digest:016x}",
            "exec_number": self.exec_number,
            "size": len(self.input),
        }


class CrashStore:
    """Keeps one record per (reason tag, coverage digest).

    With ``directory`` set each new record is written as ``<stem>.bin`` plus
    a ``<stem>.json`` metadata file.  Write errors land in ``warnings``.
    """

    def __init__(self, directory=None):
        self.directory = directory
        self.records = {}
        self.events = 0
        self.warnings = []
        if directory is not None:
            os.makedirs(directory, exist_ok=True)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records.values())

    def triage(self, result, data, exec_number=0):
        """Record a crashing run; returns True when it is a new unique crash."""
        if not result.crashed:
            raise ValueError("triage of a non-crashing result")
        self.events += 1
        record = CrashRecord(bytes(data), result.reason_tag, result.exit_value,
                             digest(classify_counts(result.coverage)), exec_number)
        if record.dedup_key in self.records:
            return False
        self.records[record.dedup_key] = record
        if self.directory is not None:
            self._persist(record)
        return True

    def _persist(self, record):
        base = os.path.join(self.directory, record.stem())
        try:
            with open(base + ".bin", "wb") as fh:
                fh.write(record.input)
            with open(base + ".json", "w") as fh:
                json.dump(record.sidecar(), fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            self.warnings.append(f"could not store crash {record.stem()}: {exc}")
