# Pin BLAS to one thread before numpy loads: runtime claims in the
# acceptance suite are single-core, and single-threaded kernels keep
# reductions bit-reproducible.
import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from seizgraph.electrodes import ElectrodeLayout  # noqa: E402


@pytest.fixture(scope="session")
def layout():
    return ElectrodeLayout.standard_10_20()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
