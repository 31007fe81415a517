import numpy as np
import pytest

from derainvid import engine as E


def rand(shape, seed, scale=1.0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape).astype(dtype) * scale


def max_rel_error(report):
    return max((err for _, err in report), default=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def projection_loss(out, proj):
    """sum(out * proj) / size as a scalar engine Tensor; proj is constant."""
    return E.mean_all(E.hadamard(out, E.tensor(proj, dtype=out.dtype)))
