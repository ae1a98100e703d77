import numpy as np
import pytest
from hypothesis import assume
from hypothesis import strategies as st

from bosongf.coeff import CoeffTensor
from bosongf.generators import NetworkSpec


def dense_ladder(n_levels: int) -> np.ndarray:
    """Annihilation matrix built directly from sqrt(n), independent of the package."""
    return np.diag(np.sqrt(np.arange(1, n_levels)), 1).astype(complex)


@st.composite
def sparse_tensors(draw, n_modes=None, max_degree=8, max_terms=6, cap=16):
    n = draw(st.sampled_from([1, 2])) if n_modes is None else n_modes
    idx = st.tuples(*[st.integers(0, max_degree)] * (2 * n))
    part = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False).filter(lambda v: v == 0 or abs(v) > 1e-6)
    data = draw(st.dictionaries(idx, st.builds(complex, part, part), min_size=1, max_size=max_terms))
    t = CoeffTensor(n, data, cap=cap)
    assume(t.nnz > 0)
    return t


@pytest.fixture
def table1():
    return NetworkSpec.table1(1)


@pytest.fixture
def damped():
    """Harmonic mode with the default frequency and damping, no drive or anharmonicity."""
    return NetworkSpec.table1(1, eta=0.0, drive=0.0)


ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE[key])
