"""Controller persistence: plain files under one data directory.

    configs/<program_id>/v<N>.xml     uploaded DSL text
    artifacts/<program_id>/v<N>.bin   compiled binary artifact
    catalog.json                      config catalog snapshot
    registry.json                     probe registry snapshot
    events.log                        one JSON object per line, fsynced
    probes/<probe_id>/                per-probe working directories

Snapshots are written atomically (temp file + rename); the event log is
append-only with an fsync per record, so every acknowledged mutation
survives a hard kill.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..bus.frames import MonitoringEvent
from ..compiler import ValidationReport, compile_ir, parse_dsl


def atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fp:
        fp.write(data)
        fp.flush()
        os.fsync(fp.fileno())
    os.replace(tmp, path)


@dataclass(frozen=True)
class ConfigVersion:
    program_id: str
    version: int
    checksum: int
    uploaded_at: float

    def to_json(self) -> dict:
        return {
            "program_id": self.program_id,
            "version": self.version,
            "checksum": f"{self.checksum:08x}",
            "uploaded_at": self.uploaded_at,
        }


class ConfigCatalog:
    """Uploaded DSL texts and their compiled artifacts, versioned per id."""

    def __init__(self, data_dir: Path) -> None:
        self._configs_dir = data_dir / "configs"
        self._artifacts_dir = data_dir / "artifacts"
        self._catalog_path = data_dir / "catalog.json"
        self._configs_dir.mkdir(parents=True, exist_ok=True)
        self._artifacts_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._entries: dict[str, list[ConfigVersion]] = {}
        self._load()

    def _load(self) -> None:
        if not self._catalog_path.exists():
            return
        raw = json.loads(self._catalog_path.read_text())
        for program_id, versions in raw.items():
            self._entries[program_id] = [
                ConfigVersion(
                    program_id=program_id,
                    version=v["version"],
                    checksum=int(v["checksum"], 16),
                    uploaded_at=v["uploaded_at"],
                )
                for v in versions
            ]

    def _save(self) -> None:
        payload = {
            program_id: [v.to_json() for v in versions]
            for program_id, versions in self._entries.items()
        }
        atomic_write(self._catalog_path, json.dumps(payload, indent=2).encode())

    def upload(self, dsl_text: str) -> tuple[Optional[ConfigVersion], ValidationReport]:
        """Compile and persist a DSL document; nothing is stored on errors."""
        program, report = parse_dsl(dsl_text)
        if program is None:
            return None, report
        artifact = compile_ir(program)
        with self._lock:
            versions = self._entries.setdefault(program.program_id, [])
            next_version = versions[-1].version + 1 if versions else 1
            cfg_dir = self._configs_dir / program.program_id
            art_dir = self._artifacts_dir / program.program_id
            cfg_dir.mkdir(exist_ok=True)
            art_dir.mkdir(exist_ok=True)
            atomic_write(cfg_dir / f"v{next_version}.xml", dsl_text.encode())
            atomic_write(art_dir / f"v{next_version}.bin", artifact.data)
            entry = ConfigVersion(
                program_id=program.program_id,
                version=next_version,
                checksum=artifact.checksum,
                uploaded_at=time.time(),
            )
            versions.append(entry)
            self._save()
        return entry, report

    def list(self) -> list[dict]:
        with self._lock:
            return [
                {
                    "program_id": program_id,
                    "versions": [v.to_json() for v in versions],
                }
                for program_id, versions in sorted(self._entries.items())
            ]

    def latest_version(self, program_id: str) -> Optional[int]:
        with self._lock:
            versions = self._entries.get(program_id)
            return versions[-1].version if versions else None

    def artifact_path(self, program_id: str, version: int) -> Optional[Path]:
        path = self._artifacts_dir / program_id / f"v{version}.bin"
        return path if path.exists() else None


@dataclass(frozen=True)
class EventLogRecord:
    offset: int
    event: MonitoringEvent
    received_at: float

    def to_json(self) -> dict:
        record = self.event.to_json()
        record["offset"] = self.offset
        record["received_at"] = self.received_at
        return record


class EventLog:
    """Append-only JSONL log of every event the broker accepted.

    Offsets are dense, strictly increasing, starting at 1. Appends fsync
    before returning; the whole log is kept in memory for queries.
    """

    def __init__(self, path: Path) -> None:
        self._path = path
        self._lock = threading.Lock()
        self._records: list[EventLogRecord] = []
        self._load()
        self._fp = open(path, "a", encoding="utf-8")

    def _load(self) -> None:
        if not self._path.exists():
            return
        with open(self._path, "r", encoding="utf-8") as fp:
            for line in fp:
                line = line.strip()
                if not line:
                    continue
                raw = json.loads(line)
                self._records.append(
                    EventLogRecord(
                        offset=raw["offset"],
                        event=MonitoringEvent(
                            topic=raw["topic"],
                            ts_micros=raw["ts_micros"],
                            seq=raw["seq"],
                            payload=raw["payload"],
                        ),
                        received_at=raw["received_at"],
                    )
                )

    def append(self, event: MonitoringEvent) -> EventLogRecord:
        with self._lock:
            record = EventLogRecord(
                offset=len(self._records) + 1,
                event=event,
                received_at=time.time(),
            )
            self._records.append(record)
            self._fp.write(json.dumps(record.to_json()) + "\n")
            self._fp.flush()
            os.fsync(self._fp.fileno())
            return record

    def query(self, prefix: str = "", since_offset: int = 0, limit: int = 1000) -> list[EventLogRecord]:
        with self._lock:
            out = []
            # Offsets are dense: offset i lives at index i-1.
            start = max(since_offset, 0)
            for record in self._records[start:]:
                if record.event.topic.startswith(prefix):
                    out.append(record)
                    if len(out) >= limit:
                        break
            return out

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def close(self) -> None:
        self._fp.close()
