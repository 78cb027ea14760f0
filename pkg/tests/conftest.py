from pathlib import Path

import pytest

from edgesplit.fileio import load_config
from edgesplit.model import TransformerConfig

CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "example_fleet.json"


@pytest.fixture(scope="session")
def example_config():
    return load_config(CONFIG_PATH)


@pytest.fixture(scope="session")
def base(example_config):
    return example_config[0]


@pytest.fixture(scope="session")
def fleet(example_config):
    return example_config[1]


@pytest.fixture(scope="session")
def unit_base():
    # smallest legal shape; makes the cost formulas checkable by hand
    return TransformerConfig(layers=1, embed_dim=1, heads=1, mlp_dim=1,
                             seq_len=1, num_classes=1)


@pytest.fixture(scope="session")
def config_path():
    return CONFIG_PATH
