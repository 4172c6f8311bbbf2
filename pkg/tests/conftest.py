"""
Pytest configuration and fixtures for CMixer workbench tests
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from cmixer_workbench.chanmodel import ScenarioConfig, generate_dataset
from cmixer_workbench.cmixer import ModelHyperparams
from cmixer_workbench.utils import setup_logging


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: toy-scale training runs, enabled by CMIXER_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get('CMIXER_RUN_SLOW') == '1':
        return
    skip_slow = pytest.mark.skip(reason="set CMIXER_RUN_SLOW=1 to run toy-scale training")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session', autouse=True)
def test_logging(tmp_path_factory):
    """Send the package log to a temporary file instead of the working directory."""
    return setup_logging(log_file=str(tmp_path_factory.mktemp('logs') / 'test.log'))


@pytest.fixture
def rng():
    """Fixture providing a seeded generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_scenario():
    """Fixture providing an 8x8 scenario."""
    return ScenarioConfig(n_t=8, n_c=8, rng_seed=7)


@pytest.fixture
def small_dataset(small_scenario):
    """Fixture providing 60 generated 8x8 samples."""
    return generate_dataset(small_scenario, 60)


@pytest.fixture
def tiny_hp():
    """Fixture providing a one-layer model with small widths."""
    return ModelHyperparams(K=1, N_t=8, N_c=8, N_t_prime=4, N_c_prime=4,
                            S_t=6, S_c=6, N_t0=2, N_c0=2)


@pytest.fixture
def table_hp():
    """Fixture providing the full-size model settings."""
    return ModelHyperparams()
