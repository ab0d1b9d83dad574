import numpy as np
import pytest
from loguru import logger
from scipy import sparse

from magnus.csr import CsrMatrix, from_scipy
from magnus.planner import SystemParams


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def random_csr(rng, n_rows, n_cols, density, integer_values=True) -> CsrMatrix:
    """Random canonical CSR; integer values keep every product exact."""
    if integer_values:
        values = lambda size: rng.integers(1, 5, size).astype(np.float64)
    else:
        values = lambda size: 1.0 - rng.random(size)
    return from_scipy(sparse.random(n_rows, n_cols, density=density, format='csr', random_state=rng,
                                    data_rvs=values))


@pytest.fixture
def make_csr(rng):
    return lambda n_rows, n_cols, density, integer_values=True: random_csr(
        rng, n_rows, n_cols, density, integer_values)


def scipy_product(a: CsrMatrix, b: CsrMatrix) -> CsrMatrix:
    c = (a.to_scipy() @ b.to_scipy()).tocsr()
    c.sort_indices()
    return from_scipy(c)


@pytest.fixture
def toy_system():
    """4 KiB L2 so that a few thousand columns already need several chunks."""
    return SystemParams(cache_line_bytes=64, l2_bytes=4096, memory_budget_bytes=1 << 20)


@pytest.fixture
def caplog_loguru():
    """Messages logged through loguru at warning level or above."""
    messages = []
    handler_id = logger.add(lambda message: messages.append(message.record['message']), level='WARNING')
    yield messages
    logger.remove(handler_id)
