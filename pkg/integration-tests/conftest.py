"""Pytest configuration and fixtures for the acceptance experiments."""

import sys
from pathlib import Path

import pytest

integration_tests_dir = Path(__file__).parent
PROJECT_ROOT = integration_tests_dir.parent
for path in (PROJECT_ROOT, PROJECT_ROOT / "control-lab"):
    if str(path) not in sys.path:
        sys.path.insert(0, str(path))

from app.schemas import load_config  # noqa: E402
from app.service import run_experiment  # noqa: E402

CONFIG_DIR = PROJECT_ROOT / "configs"


@pytest.fixture(scope="session")
def config_dir():
    return CONFIG_DIR


@pytest.fixture(scope="session")
def load_scenario():
    """Load a checked-in config and apply nested overrides."""

    def load(name: str, overrides: dict = None):
        cfg = load_config(str(CONFIG_DIR / f"{name}.yaml"))
        return cfg.override(overrides) if overrides else cfg

    return load


@pytest.fixture(scope="session")
def scenario_logs(load_scenario):
    """
    Run (config, truth, controller) scenarios once per session.

    Trials run in four worker processes; repeated requests reuse the logs.
    """
    cache = {}

    def run(name: str, truth: str, controller: str, extra: dict = None):
        key = (name, truth, controller, repr(sorted((extra or {}).items())))
        if key not in cache:
            overrides = {"truth": {"kind": truth}, "controller": {"kind": controller}}
            overrides.update(extra or {})
            cache[key] = run_experiment(load_scenario(name, overrides), parallel=4)
        return cache[key]

    return run
