"""Command-line entry point: ``python -m ccrs`` or the ``ccrs-server`` script."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from ccrs.config import ConfigError, load_config


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ccrs-server",
        description="Self-hostable job-runner service for live code execution "
        "embedded in instructional web pages.",
    )
    parser.add_argument(
        "--config",
        metavar="PATH",
        default=None,
        help="configuration file (JSON; TOML on Python 3.11+)",
    )
    parser.add_argument(
        "--listen",
        metavar="ADDR",
        default=None,
        help="bind address as host:port (overrides config file and environment)",
    )
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    try:
        config = load_config(args.config, listen=args.listen)
    except (ConfigError, OSError) as exc:
        parser.error(str(exc))
        return 2  # unreachable; parser.error exits

    import uvicorn

    from ccrs.server import create_app

    app = create_app(config)
    uvicorn.run(app, host=config.listen_host, port=config.listen_port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
