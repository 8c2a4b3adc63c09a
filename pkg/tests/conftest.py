# Pin BLAS to one thread before numpy loads: keeps runtimes honest for the
# single-core acceptance budgets and makes reductions bit-reproducible.
import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS", "BLIS_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from cmfusion.data import SynthSpec, generate_synthetic_dataset  # noqa: E402


@pytest.fixture(scope="session")
def tiny_separable():
    """24 separable samples, shared across tests that just need real-shaped data."""
    return generate_synthetic_dataset(SynthSpec(n_samples=24, seed=99))
