import os

# Pin BLAS threading before numpy loads anywhere; bit-exact determinism
# checks assume a fixed thread count.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest


@pytest.fixture
def np_rng():
    return np.random.RandomState(1234)


def rel_linf(got: np.ndarray, ref: np.ndarray) -> float:
    """Max absolute difference normalized by the reference's max magnitude."""
    denom = max(float(np.abs(ref).max()), 1e-12)
    return float(np.abs(np.asarray(got) - np.asarray(ref)).max()) / denom


def max_rel_grad_diff(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.abs(a).max()), float(np.abs(b).max()), 1e-8)
    return float(np.abs(a - b).max()) / denom
