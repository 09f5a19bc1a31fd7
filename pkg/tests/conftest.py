import numpy as np
import pytest

from lightasep.phase import BoundaryParams, RateParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_rates(rng, q_max=0.8):
    """Jump rates spread over all phases (log-uniform alpha, beta)."""
    return RateParams(
        q=float(rng.uniform(0, q_max)),
        alpha=float(np.exp(rng.uniform(-2, 1))),
        beta=float(np.exp(rng.uniform(-2, 1))),
        gamma=float(rng.uniform(0, 0.5)),
        delta=float(rng.uniform(0, 0.5)),
    )


def random_boundary(rng, phase="MC"):
    q = float(rng.uniform(0, 0.8))
    B, D = (float(x) for x in -rng.uniform(0, 0.8, 2))
    if phase == "MC":
        A, C = (float(x) for x in rng.uniform(0, 0.95, 2))
    elif phase == "HD":
        A = float(rng.uniform(1.1, 3))
        C = float(rng.uniform(0, A - 0.1))
    elif phase == "LD":
        C = float(rng.uniform(1.1, 3))
        A = float(rng.uniform(0, C - 0.1))
    else:
        A = C = float(rng.uniform(1.1, 3))
    return BoundaryParams(A, B, C, D, q)
