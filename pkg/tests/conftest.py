import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def spd_matrices(min_dim=1, max_dim=6, cond_cap=50.0):
    """Strategy for well-conditioned symmetric positive definite matrices."""

    @st.composite
    def build(draw):
        d = draw(st.integers(min_dim, max_dim))
        A = draw(arrays(np.float64, (d, d), elements=st.floats(-2, 2, allow_nan=False, width=64)))
        S = A @ A.T + np.eye(d) * (1.0 + np.trace(A @ A.T) / cond_cap)
        return S

    return build()


def random_spd(rng, d, low=0.5, high=2.0):
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return Q @ np.diag(rng.uniform(low, high, d)) @ Q.T
