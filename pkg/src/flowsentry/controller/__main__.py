"""Controller entry point: ``flowsentry-controller --data-dir <dir>``."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading

from .server import DEFAULT_BUS_PORT, DEFAULT_HTTP_PORT, Controller


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flowsentry-controller")
    parser.add_argument("--data-dir", required=True, help="persistence directory")
    parser.add_argument("--http-port", type=int, default=DEFAULT_HTTP_PORT)
    parser.add_argument("--bus-port", type=int, default=DEFAULT_BUS_PORT)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--ui-dir", default=None, help="directory of built dashboard assets")
    args = parser.parse_args(argv)

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    controller = Controller(
        data_dir=args.data_dir,
        http_port=args.http_port,
        bus_port=args.bus_port,
        host=args.host,
        ui_dir=args.ui_dir,
    )
    controller.start()
    host, port = controller.http_address
    bus_host, bus_port = controller.broker.address
    print(f"controller ready http={host}:{port} bus={bus_host}:{bus_port}", flush=True)

    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    stop.wait()
    controller.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
