import numpy as np
import pytest

from homflow.probability import MaterialParams, ShiftSpace, build_ensemble


def two_phase_space(d=1, L=2, r=(1.0, 1.0), a=(1.0, 4.0), b=(1.0, 1.0)):
    """Torus pattern alternating between two materials."""
    ncells = L**d
    pattern = tuple(
        MaterialParams(r=r[i % 2], a=a[i % 2], b=b[i % 2]) for i in range(ncells)
    )
    return ShiftSpace(model="torus", d=d, L=L, pattern=pattern)


def stripe_space_2d(L=2, a=(1.0, 4.0)):
    """Laminate: coefficient depends on the first coordinate only."""
    pattern = []
    for i in range(L):
        for _ in range(L):
            pattern.append(MaterialParams(r=1.0, a=a[i % 2], b=1.0))
    return ShiftSpace(model="torus", d=2, L=L, pattern=tuple(pattern))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def space_1d():
    return two_phase_space()


@pytest.fixture
def ensemble_1d(space_1d):
    return build_ensemble(space_1d, m=8, seed=0)
