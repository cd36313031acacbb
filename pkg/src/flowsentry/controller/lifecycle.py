"""Probe registry and lifecycle management.

Legal lifecycle edges, enforced exactly:

    install: registered -> installed
    start:   installed | stopped -> running
    stop:    running -> stopped
    remove:  installed | running | stopped | failed -> removed (terminal)
    (internal) running -> failed on process death or stop timeout

Probes run as child processes; STOP/STATUS travel over the child's
stdin/stdout. Every mutation persists the registry snapshot before the call
returns. On startup, probes recorded as running are orphans from a previous
controller life and are marked failed.
"""

from __future__ import annotations

import json
import os
import re
import select
import shutil
import signal
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..probe.config import ProbeConfig, format_probe_config
from .storage import ConfigCatalog, atomic_write

LIFECYCLE_STATES = ("registered", "installed", "running", "stopped", "failed", "removed")

COMMAND_EDGES = {
    "install": ("registered",),
    "start": ("installed", "stopped"),
    "stop": ("running",),
    "remove": ("installed", "running", "stopped", "failed"),
}

STOP_GRACE_SECONDS = 5.0
_PROBE_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


class UnknownProbeError(KeyError):
    pass


class DuplicateProbeError(ValueError):
    pass


class IllegalTransitionError(Exception):
    def __init__(self, probe_id: str, command: str, state: str) -> None:
        super().__init__(
            f"illegal transition: cannot {command} probe {probe_id!r} in state {state!r}"
        )
        self.state = state


class UnknownArtifactError(KeyError):
    pass


@dataclass
class ProbeDescriptor:
    probe_id: str
    host_label: str = ""
    attach_mode: Optional[str] = None
    attach_source: Optional[str] = None
    program_id: Optional[str] = None
    program_version: Optional[int] = None
    lifecycle: str = "registered"
    pid: Optional[int] = None
    last_status: Optional[dict] = None

    def to_json(self) -> dict:
        attach = None
        if self.attach_mode is not None:
            attach = {"mode": self.attach_mode, "source": self.attach_source}
        artifact = None
        if self.program_id is not None:
            artifact = {"program_id": self.program_id, "version": self.program_version}
        return {
            "probe_id": self.probe_id,
            "host_label": self.host_label,
            "attach": attach,
            "artifact": artifact,
            "lifecycle": self.lifecycle,
            "pid": self.pid,
            "last_status": self.last_status,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "ProbeDescriptor":
        attach = raw.get("attach") or {}
        artifact = raw.get("artifact") or {}
        return cls(
            probe_id=raw["probe_id"],
            host_label=raw.get("host_label", ""),
            attach_mode=attach.get("mode"),
            attach_source=attach.get("source"),
            program_id=artifact.get("program_id"),
            program_version=artifact.get("version"),
            lifecycle=raw.get("lifecycle", "registered"),
            pid=raw.get("pid"),
            last_status=raw.get("last_status"),
        )


class ProbeManager:
    def __init__(self, data_dir: Path, catalog: ConfigCatalog, bus_address: str) -> None:
        self._data_dir = data_dir
        self._probes_dir = data_dir / "probes"
        self._probes_dir.mkdir(parents=True, exist_ok=True)
        self._registry_path = data_dir / "registry.json"
        self._catalog = catalog
        self._bus_address = bus_address
        self._lock = threading.RLock()
        self._descriptors: dict[str, ProbeDescriptor] = {}
        self._procs: dict[str, subprocess.Popen] = {}
        self._load()

    # -- persistence -----------------------------------------------------------

    def _load(self) -> None:
        if not self._registry_path.exists():
            return
        raw = json.loads(self._registry_path.read_text())
        for entry in raw.get("probes", []):
            desc = ProbeDescriptor.from_json(entry)
            if desc.lifecycle == "running":
                # Orphaned by a previous controller life: unmanageable now.
                if desc.pid:
                    try:
                        os.kill(desc.pid, signal.SIGTERM)
                    except (OSError, ProcessLookupError):
                        pass
                desc.lifecycle = "failed"
                desc.pid = None
            self._descriptors[desc.probe_id] = desc
        self._save()

    def _save(self) -> None:
        payload = {"probes": [d.to_json() for d in self._descriptors.values()]}
        atomic_write(self._registry_path, json.dumps(payload, indent=2).encode())

    # -- helpers ------------------------------------------------------------------

    def _get(self, probe_id: str) -> ProbeDescriptor:
        try:
            return self._descriptors[probe_id]
        except KeyError:
            raise UnknownProbeError(probe_id) from None

    def _require_state(self, desc: ProbeDescriptor, command: str) -> None:
        if desc.lifecycle not in COMMAND_EDGES[command]:
            raise IllegalTransitionError(desc.probe_id, command, desc.lifecycle)

    def workdir(self, probe_id: str) -> Path:
        return self._probes_dir / probe_id

    # -- registry operations ---------------------------------------------------------

    def add(self, probe_id: str, host_label: str = "") -> ProbeDescriptor:
        if not probe_id or not _PROBE_ID_RE.match(probe_id):
            raise ValueError(f"invalid probe id {probe_id!r}")
        with self._lock:
            if probe_id in self._descriptors:
                raise DuplicateProbeError(f"probe {probe_id!r} already registered")
            desc = ProbeDescriptor(probe_id=probe_id, host_label=host_label)
            self._descriptors[probe_id] = desc
            self._save()
            return desc

    def list(self) -> list[ProbeDescriptor]:
        with self._lock:
            return list(self._descriptors.values())

    def get(self, probe_id: str) -> ProbeDescriptor:
        with self._lock:
            return self._get(probe_id)

    # -- lifecycle commands ------------------------------------------------------------

    def install(
        self,
        probe_id: str,
        program_id: str,
        version: Optional[int],
        attach_mode: str,
        attach_source: str,
    ) -> ProbeDescriptor:
        with self._lock:
            desc = self._get(probe_id)
            self._require_state(desc, "install")
            if version is None:
                version = self._catalog.latest_version(program_id)
                if version is None:
                    raise UnknownArtifactError(program_id)
            artifact_path = self._catalog.artifact_path(program_id, version)
            if artifact_path is None:
                raise UnknownArtifactError(f"{program_id} v{version}")

            workdir = self.workdir(probe_id)
            workdir.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(artifact_path, workdir / "artifact.bin")
            config = ProbeConfig(
                probe_id=probe_id,
                attach_mode=attach_mode,
                attach_source=attach_source,
                bus_address=self._bus_address,
                artifact_path=str(workdir / "artifact.bin"),
                replay_pacing="as_fast_as_possible",
            )
            (workdir / "probe.cfg").write_text(format_probe_config(config))

            desc.attach_mode = attach_mode
            desc.attach_source = attach_source
            desc.program_id = program_id
            desc.program_version = version
            desc.lifecycle = "installed"
            self._save()
            return desc

    def start(self, probe_id: str) -> ProbeDescriptor:
        with self._lock:
            desc = self._get(probe_id)
            self._require_state(desc, "start")
            workdir = self.workdir(probe_id)
            log_fp = open(workdir / "probe.log", "ab")
            proc = subprocess.Popen(
                [sys.executable, "-m", "flowsentry.probe", "--config", str(workdir / "probe.cfg")],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=log_fp,
                cwd=workdir,
                text=True,
            )
            log_fp.close()
            self._procs[probe_id] = proc
            desc.pid = proc.pid
            desc.lifecycle = "running"
            self._save()
            return desc

    def stop(self, probe_id: str) -> ProbeDescriptor:
        with self._lock:
            desc = self._get(probe_id)
            self._require_state(desc, "stop")
            proc = self._procs.get(probe_id)
            if proc is None or proc.poll() is not None:
                # Already dead under us; record what the exit says.
                self._note_exit(desc, proc)
                self._procs.pop(probe_id, None)
                self._save()
                return desc
            try:
                reply = self._control_request(proc, "STOP", timeout=STOP_GRACE_SECONDS)
                if reply and reply.startswith("OK "):
                    desc.last_status = json.loads(reply[3:])
                proc.wait(timeout=STOP_GRACE_SECONDS)
                desc.lifecycle = "stopped"
            except (subprocess.TimeoutExpired, OSError, ValueError):
                proc.kill()
                proc.wait()
                desc.lifecycle = "failed"
            desc.pid = None
            self._procs.pop(probe_id, None)
            self._save()
            return desc

    def remove(self, probe_id: str) -> None:
        with self._lock:
            desc = self._get(probe_id)
            self._require_state(desc, "remove")
            if desc.lifecycle == "running":
                self.stop(probe_id)
            shutil.rmtree(self.workdir(probe_id), ignore_errors=True)
            self._descriptors.pop(probe_id, None)
            self._procs.pop(probe_id, None)
            self._save()

    # -- status polling ------------------------------------------------------------------

    def poll(self, probe_id: str) -> ProbeDescriptor:
        with self._lock:
            desc = self._get(probe_id)
            if desc.lifecycle != "running":
                return desc
            proc = self._procs.get(probe_id)
            if proc is None:
                desc.lifecycle = "failed"
                desc.pid = None
                self._save()
                return desc
            code = proc.poll()
            if code is not None:
                self._note_exit(desc, proc)
                self._procs.pop(probe_id, None)
                self._save()
                return desc
            try:
                reply = self._control_request(proc, "STATUS", timeout=2.0)
                if reply and reply.startswith("OK "):
                    desc.last_status = json.loads(reply[3:])
                    self._save()
            except (OSError, ValueError):
                pass
            return desc

    def poll_all(self) -> list[ProbeDescriptor]:
        with self._lock:
            return [self.poll(pid) for pid in list(self._descriptors)]

    def _note_exit(self, desc: ProbeDescriptor, proc: Optional[subprocess.Popen]) -> None:
        code = proc.returncode if proc is not None else None
        desc.lifecycle = "stopped" if code == 0 else "failed"
        desc.pid = None
        status_path = self.workdir(desc.probe_id) / "status.json"
        if status_path.exists():
            try:
                desc.last_status = json.loads(status_path.read_text())
            except (OSError, ValueError):
                pass

    @staticmethod
    def _control_request(proc: subprocess.Popen, line: str, timeout: float) -> Optional[str]:
        proc.stdin.write(line + "\n")
        proc.stdin.flush()
        ready, _, _ = select.select([proc.stdout], [], [], timeout)
        if not ready:
            raise OSError(f"no reply to {line} within {timeout}s")
        return proc.stdout.readline().strip()

    def shutdown(self) -> None:
        """Best-effort stop of every child on controller exit."""
        with self._lock:
            for probe_id, proc in list(self._procs.items()):
                if proc.poll() is None:
                    try:
                        proc.terminate()
                        proc.wait(timeout=2)
                    except (OSError, subprocess.TimeoutExpired):
                        proc.kill()
            self._procs.clear()
