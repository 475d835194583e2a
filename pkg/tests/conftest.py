from pathlib import Path

import numpy as np
import pytest

from performa import kernels
from performa.distribution import EmpiricalBase

FIXTURE_CSV = Path(__file__).parent / "data" / "credit_fixture_200.csv"


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger one compilation of every kernel up front so timing-sensitive
    tests measure the work, not the JIT."""
    X = np.zeros((2, 3))
    y = np.zeros(2)
    w = np.full(2, 0.5)
    w1 = np.zeros((2, 3))
    b1 = np.zeros(2)
    w2 = np.zeros(2)
    kernels.mlp_forward(w1, b1, w2, 0.0, 0.01, 0.9, X)
    kernels.gd_minimize(w1, b1, w2, 0.0, 0.01, 0.9, X, y, w,
                        0.1, 1e-9, 1, True)


@pytest.fixture
def fixture_csv() -> Path:
    return FIXTURE_CSV


@pytest.fixture
def two_atom_base() -> EmpiricalBase:
    """The smallest interesting base: two 1-D atoms with equal mass."""
    return EmpiricalBase.from_arrays(
        np.array([[0.0], [1.0]]), np.array([0.0, 0.1]))


@pytest.fixture
def small_strategic_base() -> EmpiricalBase:
    """Five atoms, one strategic and one non-strategic coordinate, with a
    duplicated non-strategic profile so strategic resampling moves mass."""
    X = np.array([[0.0, 10.0],
                  [1.0, 10.0],
                  [2.0, 20.0],
                  [0.0, 20.0],
                  [1.0, 30.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0, 0.0])
    w = np.array([0.2, 0.25, 0.15, 0.3, 0.1])
    return EmpiricalBase.from_arrays(X, y, w, strategic_idx=[0])
