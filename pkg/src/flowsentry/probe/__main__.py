"""Probe process entry point: ``flowsentry-probe --config <path>``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ProbeConfigError, load_probe_config
from .runtime import EXIT_CONFIG, ProbeRuntime


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flowsentry-probe")
    parser.add_argument("--config", required=True, help="probe config file (key=value lines)")
    args = parser.parse_args(argv)

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = load_probe_config(args.config)
    except ProbeConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    status_path = os.path.join(os.path.dirname(os.path.abspath(args.config)), "status.json")
    return ProbeRuntime(config, status_path=status_path).run()


if __name__ == "__main__":
    sys.exit(main())
