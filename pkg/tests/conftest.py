import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rsmauav.geometry import BuildingPrism
from rsmauav.rsma import Association, NetworkState, PowerAllocation

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def unit_box():
    """Box x in [10, 20], y in [-5, 5], 30 m tall."""
    return BuildingPrism.box(10, 20, -5, 5, 30)


def random_binary_state(rng, K, M, p_max=1.0, common=True, positions=None):
    """Random feasible state: every user on one UAV, random power split per UAV."""
    serving = rng.integers(0, M, size=K)
    c = np.zeros((K, M))
    c[np.arange(K), serving] = 1.0
    pc = np.zeros(M)
    pp = np.zeros((K, M))
    for m in range(M):
        users = np.flatnonzero(serving == m)
        w = rng.dirichlet(np.ones(len(users) + 1)) * p_max * rng.uniform(0.2, 1.0)
        if common:
            pc[m] = w[0]
        pp[users, m] = w[1:] if common else w[1:] + w[0] / max(len(users), 1)
    if positions is None:
        positions = np.column_stack([rng.uniform(0, 800, M), rng.uniform(0, 800, M), rng.uniform(101, 400, M)])
    return NetworkState(positions, PowerAllocation(pc, pp), Association(c, [K] * M))


def random_gains(rng, K, M):
    return 10 ** rng.uniform(-14, -8, size=(K, M))


def inside_prism(b, pts):
    pts = np.atleast_2d(pts)
    n = b.outward_normals
    s = np.einsum("ij,pij->pi", n, pts[:, None, :2] - b.vertices[None])
    return np.all(s < 0, axis=1) & (pts[:, 2] > 0) & (pts[:, 2] < b.height)
