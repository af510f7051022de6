"""Pytest configuration: load .env so config has values when tests run; gate the slow runs."""
from pathlib import Path

import pytest

# Load .env from project root (parent of tests/)
_root = Path(__file__).resolve().parent.parent
_env = _root / ".env"
if _env.exists():
    from dotenv import load_dotenv
    load_dotenv(_env)

import config as reach_config  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-resolution scenario runs, enabled with REACH_RUN_SLOW=true")


def pytest_collection_modifyitems(config, items):
    if reach_config.REACH_RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set REACH_RUN_SLOW=true to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
