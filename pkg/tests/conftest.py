import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def rand_spd(d, rng, scale=1.0):
    """Random well-conditioned SPD matrix."""
    B = rng.standard_normal((d, d))
    return scale * (B @ B.T + 0.5 * d * np.eye(d)) / d
