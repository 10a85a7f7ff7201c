import shutil
from pathlib import Path

import numpy as np
import pytest

from ivrepro.estimator import DesignMatrixBundle

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def synthetic_package(tmp_path):
    """Copy of the bundled synthetic replication package."""
    dest = tmp_path / "package"
    shutil.copytree(FIXTURES / "synthetic_package", dest)
    return dest


@pytest.fixture
def multispec_package(tmp_path):
    """Copy of the three-specification synthetic package."""
    dest = tmp_path / "multi_package"
    shutil.copytree(FIXTURES / "multispec_package", dest)
    return dest


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def make_bundle(y, D, Z, X=None, x_labels=None, **kw):
    """Assemble a DesignMatrixBundle from plain arrays (intercept appended
    when X is not given)."""
    y = np.asarray(y, float)
    D = np.asarray(D, float)
    Z = np.asarray(Z, float).reshape(len(y), -1)
    if X is None:
        X = np.ones((len(y), 1))
        x_labels = ["_cons"]
    else:
        X = np.asarray(X, float)
        x_labels = x_labels or [f"x{i}" for i in range(X.shape[1] - 1)] + ["_cons"]
    return DesignMatrixBundle(
        y=y, D=D, Z=Z, X=X, x_labels=x_labels,
        z_labels=[f"z{i}" for i in range(Z.shape[1])], **kw)


@pytest.fixture
def wald_bundle():
    """Just-identified, no controls; Wald ratio = (8-3)/(3.5-1.5) = 2.5."""
    return make_bundle([2, 4, 7, 9], [1, 2, 3, 4], [0, 0, 1, 1])


@pytest.fixture
def clustered_bundle():
    rng = np.random.default_rng(7)
    n, G = 25, 5
    cl = np.repeat(np.arange(G), n // G)
    D = rng.normal(size=n)
    Z = D + 0.5 * rng.normal(size=n)
    y = 2 * D + rng.normal(size=n) * (1 + 0.2 * cl)
    return make_bundle(y, D, Z, cluster_ids=cl, cluster_labels=cl)
