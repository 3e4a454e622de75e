import numpy as np
import pytest

from lqteam import make_benchmark_instance, make_two_way_benchmark, random_instance
from lqteam.numerics import SeedStream


@pytest.fixture(scope="session")
def benchmark():
    return make_benchmark_instance()


@pytest.fixture(scope="session")
def two_way():
    return make_two_way_benchmark()


@pytest.fixture(scope="session")
def coupled_cost_instance():
    """A two-system instance whose Q couples the systems (off-diagonal blocks),
    so the decomposition's mixed term is genuinely nonzero — unlike the
    benchmark, whose diagonal Q makes the joint gain decouple."""
    inst = random_instance(SeedStream(11, "demo"), n_systems=2, max_dim=2,
                           scenario="marl2")
    offdiag = inst.cost.Q - np.diag(np.diag(inst.cost.Q))
    assert np.max(np.abs(offdiag)) > 0.1
    return inst
