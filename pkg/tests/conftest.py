import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aetlm.mesh import ElectrodeLayout, extract_interior_submesh, generate_disk_mesh

settings.register_profile(
    "aetlm", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("aetlm")


@pytest.fixture(scope="session")
def disk():
    """Unit disk, 16 electrodes, ~4.5k triangles."""
    return generate_disk_mesh(1.0, 0.05, ElectrodeLayout(16))


@pytest.fixture(scope="session")
def small_disk():
    return generate_disk_mesh(1.0, 0.1, ElectrodeLayout(16))


@pytest.fixture(scope="session")
def dirichlet_disk(small_disk):
    return extract_interior_submesh(small_disk, 0.0)


@pytest.fixture(scope="session")
def heart_mesh():
    """Coarse heart-lung disk (r = 0.25 m)."""
    return generate_disk_mesh(0.25, 0.012, ElectrodeLayout(16))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
