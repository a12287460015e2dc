import numpy as np
import pytest

from domlab import cocycle, dynamics, measures


@pytest.fixture(scope="session")
def cat():
    return dynamics.make_map("cat")


@pytest.fixture(scope="session")
def identity():
    return dynamics.make_map("identity")


@pytest.fixture(scope="session")
def perturbed():
    return dynamics.make_map("perturbed_cat", {"eps": 0.05})


@pytest.fixture(scope="session")
def cat3d():
    return dynamics.make_map("cat3d", {"a": 0.5, "c": 0.05})


@pytest.fixture(scope="session")
def cat_splitting(cat):
    return cocycle.oseledets_splitting(cat, np.array([[0.1, 0.2], [0.5, 0.7]]),
                                       dim_F=1)


@pytest.fixture(scope="session")
def perturbed_splitting(perturbed):
    pts = np.random.default_rng(11).random((16, 2))
    return cocycle.oseledets_splitting(perturbed, pts, dim_F=1)


@pytest.fixture(scope="session")
def family16():
    return measures.TestFunctionFamily(16, 2)


# Analytic cat-map data used as oracles throughout.
CAT_U = np.array([1.0, (np.sqrt(5.0) - 1.0) / 2.0])
CAT_U /= np.linalg.norm(CAT_U)
CAT_S = np.array([1.0, -(np.sqrt(5.0) + 1.0) / 2.0])
CAT_S /= np.linalg.norm(CAT_S)


@pytest.fixture(scope="session")
def cat_eigvecs():
    return CAT_U.copy(), CAT_S.copy()
