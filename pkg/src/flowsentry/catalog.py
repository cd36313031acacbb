"""Access to the monitoring programs shipped with the package."""

from __future__ import annotations

from importlib import resources

BUILTIN_PROGRAMS = ("synflood", "portscan")


def builtin_program_text(name: str) -> str:
    if name not in BUILTIN_PROGRAMS:
        raise KeyError(f"no builtin program {name!r}; have {', '.join(BUILTIN_PROGRAMS)}")
    return resources.files("flowsentry").joinpath(f"dsl/{name}.xml").read_text(encoding="utf-8")
