import math

import numpy as np
import pytest
from hypothesis import settings

from robusta.model_core import LinearClassifier

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def central_fd(fun, theta, h=1e-4):
    """Central finite-difference gradient of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def disk_same_side(h, r):
    """Fraction of a radius-r disk on the centre's side of a line at distance h."""
    if h >= r:
        return 1.0
    seg = r * r * math.acos(h / r) - h * math.sqrt(r * r - h * h)
    return 1.0 - seg / (math.pi * r * r)


def vertical_boundary(c=0.5):
    """Class 0 where x1 > c, class 1 where x1 < c."""
    return LinearClassifier.from_hyperplane([1.0, 0.0], -c)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
