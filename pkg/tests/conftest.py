"""Shared fixtures: the two 1D smoke runs and a results registry for the acceptance summary."""

from pathlib import Path

import numpy as np
import pytest

from thermodamage.config import load_config, run_simulation
from thermodamage.verification import verify_trajectory

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

ACCEPTANCE_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, msg = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {msg}")


@pytest.fixture(scope="session")
def config_dir():
    return CONFIG_DIR


@pytest.fixture(scope="session")
def damage_config():
    return load_config(CONFIG_DIR / "smoke_damage.ini")


@pytest.fixture(scope="session")
def reversible_config():
    return load_config(CONFIG_DIR / "smoke_reversible.ini")


@pytest.fixture(scope="session")
def damage_run(damage_config):
    traj = run_simulation(damage_config)
    return traj, verify_trajectory(traj)


@pytest.fixture(scope="session")
def reversible_run(reversible_config):
    traj = run_simulation(reversible_config)
    return traj, verify_trajectory(traj)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
