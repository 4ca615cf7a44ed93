"""Regenerate docs/api.yaml from the live route definitions.

Usage: python3 scripts/export_openapi.py
"""

from __future__ import annotations

import os
import sys
import tempfile

import yaml

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ccrs.config import ServerConfig  # noqa: E402
from ccrs.executor import MockExecutor  # noqa: E402
from ccrs.server import create_app  # noqa: E402


def main() -> int:
    repo_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out_path = os.path.join(repo_root, "docs", "api.yaml")
    with tempfile.TemporaryDirectory() as scratch:
        config = ServerConfig(
            spool_root=os.path.join(scratch, "spool"),
            registry_file=os.path.join(scratch, "sites.json"),
            log_file=os.path.join(scratch, "audit.log"),
        )
        app = create_app(config, executor=MockExecutor())
        document = app.openapi()
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(document, fh, sort_keys=False, allow_unicode=True)
    print(f"wrote {out_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
