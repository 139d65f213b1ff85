import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ARRAYS = Path(__file__).parent.parent / "arrays"


@pytest.fixture(scope="session")
def planar_array_file():
    return ARRAYS / "planar_1x3x6.array"


@pytest.fixture(scope="session")
def cubic_array_file():
    return ARRAYS / "cubic_shell_4x4x4.array"


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
