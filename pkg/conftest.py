import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent / "FirstContact"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run corpus-scale acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: corpus-scale test, skipped unless --runslow is given")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
