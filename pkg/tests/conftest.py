import numpy as np
import pytest

from fastslow.acceptance import Workspace
from fastslow.systems import fixture


@pytest.fixture(scope="session")
def lin():
    return fixture("LIN")


@pytest.fixture(scope="session")
def cbd():
    return fixture("CBD")


@pytest.fixture(scope="session")
def cpl():
    return fixture("CPL")


@pytest.fixture(scope="session")
def workspace():
    """Shared acceptance workspace; caches drift/diffusion solves."""
    return Workspace()


def birkhoff_fast_orbit(system, theta, x0, n_steps):
    """Frozen-map orbit of a batch of points; oracle helper (no package reuse)."""
    th = np.broadcast_to(np.atleast_1d(theta), (x0.shape[0], system.d))
    xs = np.empty((n_steps, x0.shape[0]))
    x = x0.copy()
    for k in range(n_steps):
        xs[k] = x
        x = system.f(x, th)
    return xs
