import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from relational_ed import GridSpec, ParticleSystem
from relational_ed.core import from_function

settings.register_profile(
    "numeric",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("numeric")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid1():
    return GridSpec(1, 1, 256, 48.0)


@pytest.fixture
def grid2():
    return GridSpec(2, 1, 64, 16.0)


@pytest.fixture
def unit():
    return ParticleSystem([1.0])


def smooth_state(grid, rng, nodeless=True):
    """Gaussian envelope times a random smooth modulation; nodeless if asked."""
    coeffs = rng.normal(size=(3, 2)) * 0.3
    centre = rng.normal(size=grid.dim) * 0.3
    spread = 16.0 if nodeless else 4.0

    def fn(*xs):
        env = np.ones_like(xs[0], dtype=complex)
        for A, x in enumerate(xs):
            env = env * np.exp(-((x - centre[A]) ** 2) / spread)
        mod = 0j
        for j, (a, b) in enumerate(coeffs):
            mod = mod + (a + 1j * b) * np.sin((j + 1) * 0.35 * sum(xs))
        return env * (np.exp(mod) if nodeless else 1.0 + mod)

    return from_function(grid, fn)
