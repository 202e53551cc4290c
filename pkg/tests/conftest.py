from pathlib import Path

import numpy as np
import pytest

import edicke
from edicke import ReducedParams
from edicke.params import SolverSettings

# A->N critical field of 1.0 T at 0.5 K (bisection result, checked in test_atlas)
CALIBRATED_GZ = 15.3154296875


@pytest.fixture(scope="session")
def gz():
    return CALIBRATED_GZ


@pytest.fixture(scope="session")
def paper_params():
    return ReducedParams(g_lande_z=CALIBRATED_GZ)


@pytest.fixture(scope="session")
def settings():
    return SolverSettings(workers=1)


@pytest.fixture(scope="session")
def phase_map(paper_params, settings):
    from edicke import atlas
    return atlas.sweep(paper_params, np.linspace(0.5, 6, 60), np.linspace(0, 1.5, 60),
                       settings=settings)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


MICRO_FILE = Path(edicke.__file__).parent / "data" / "micro_illustrative.toml"


@pytest.fixture(scope="session")
def micro_params():
    from edicke.config import load_config_file
    return load_config_file(MICRO_FILE).micro
