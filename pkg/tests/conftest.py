import logging
import os
from pathlib import Path

import numpy as np
import pytest

from core.dataset_store import load_dataset
from tests.helpers import TOY_CLASSES, TOY_NAME, make_samples, toy_card, write_dataset
from utils.logger import ROOT_LOGGER_NAME

UEA_DIR = os.environ.get("SERIESTABLE_UEA_DIR")

requires_uea = pytest.mark.skipif(not UEA_DIR, reason="SERIESTABLE_UEA_DIR not set")


@pytest.fixture
def toy_splits():
    rng = np.random.default_rng(7)
    train = make_samples(rng, 4)
    test = make_samples(rng, 3)
    return train, test


@pytest.fixture
def toy_dir(tmp_path, toy_splits) -> Path:
    train, test = toy_splits
    return write_dataset(tmp_path / "data", TOY_NAME, train, test, TOY_CLASSES,
                         card=toy_card(TOY_CLASSES, ["dim_0", "dim_1"]))


@pytest.fixture
def toy_dataset(toy_dir):
    return load_dataset(toy_dir, TOY_NAME)


@pytest.fixture(autouse=True)
def reset_logging():
    """Drop handlers installed by the application so streams do not leak across tests"""
    yield
    logger = logging.getLogger(ROOT_LOGGER_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
