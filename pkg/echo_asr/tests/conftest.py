import os

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance runs, enabled by ECHO_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("ECHO_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set ECHO_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tmp_runs(tmp_path, monkeypatch):
    # чтобы команды без --out не писали в ./runs
    from echo_asr.settings import settings
    monkeypatch.setattr(settings, "runs_dir", str(tmp_path / "runs"))
    return tmp_path
