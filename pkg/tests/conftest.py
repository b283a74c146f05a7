import pytest

from atomql import GpuSpec, TITAN_V, synthesize_table


@pytest.fixture(scope="session")
def mini_gpu():
    # small grid keeps the unit tests fast; acceptance uses the full Volta shape
    return GpuSpec("mini", warps_per_sm=8, sm_count=4)


@pytest.fixture(scope="session")
def mini_table(mini_gpu):
    return synthesize_table(mini_gpu)


@pytest.fixture(scope="session")
def volta_table():
    return synthesize_table(TITAN_V)
