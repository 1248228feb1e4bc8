from pathlib import Path

import numpy as np
import pytest

from smartvmf.classifier import generate_synthetic, train_reference

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic(seed=7, num_classes=4, per_class=25, height=32, width=32)


@pytest.fixture(scope="session")
def reference_model(synthetic):
    return train_reference(synthetic)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
