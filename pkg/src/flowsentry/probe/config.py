"""Probe configuration file: plain key=value lines, one per field.

    probe_id=p1
    attach_mode=direct            # or mirrored
    attach_source=pcap:/path.pcap # or tap:host:port
    bus_address=127.0.0.1:7500
    artifact_path=/path/program.bin
    replay_pacing=as_fast_as_possible   # or honor_timestamps

Blank lines and lines starting with '#' are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass

ATTACH_MODES = ("direct", "mirrored")
PACING_MODES = ("as_fast_as_possible", "honor_timestamps")

REQUIRED_KEYS = (
    "probe_id",
    "attach_mode",
    "attach_source",
    "bus_address",
    "artifact_path",
    "replay_pacing",
)


class ProbeConfigError(Exception):
    pass


@dataclass(frozen=True)
class ProbeConfig:
    probe_id: str
    attach_mode: str
    attach_source: str
    bus_address: str
    artifact_path: str
    replay_pacing: str


def parse_probe_config(text: str) -> ProbeConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ProbeConfigError(f"line {lineno}: expected key=value, found {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in REQUIRED_KEYS:
            raise ProbeConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ProbeConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()

    missing = [k for k in REQUIRED_KEYS if k not in values]
    if missing:
        raise ProbeConfigError(f"missing keys: {', '.join(missing)}")

    if not values["probe_id"]:
        raise ProbeConfigError("probe_id must be non-empty")
    if values["attach_mode"] not in ATTACH_MODES:
        raise ProbeConfigError(f"attach_mode must be one of {', '.join(ATTACH_MODES)}")
    source = values["attach_source"]
    if not (source.startswith("pcap:") or source.startswith("tap:")):
        raise ProbeConfigError("attach_source must be pcap:<path> or tap:<host>:<port>")
    if values["attach_mode"] == "mirrored" and not source.startswith("tap:"):
        raise ProbeConfigError("mirrored attach requires a tap endpoint")
    if values["replay_pacing"] not in PACING_MODES:
        raise ProbeConfigError(f"replay_pacing must be one of {', '.join(PACING_MODES)}")

    return ProbeConfig(**values)


def format_probe_config(config: ProbeConfig) -> str:
    return "".join(f"{key}={getattr(config, key)}\n" for key in REQUIRED_KEYS)


def load_probe_config(path) -> ProbeConfig:
    try:
        with open(path, "r", encoding="utf-8") as fp:
            return parse_probe_config(fp.read())
    except OSError as exc:
        raise ProbeConfigError(f"cannot read config {path}: {exc}") from exc
