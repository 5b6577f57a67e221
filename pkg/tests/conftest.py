import math

import numpy as np
import pytest

from chiralwire.geometry import SpineSpline, WireDesign
from chiralwire.material import THZ, builtin_permittivity, wavenumber


@pytest.fixture(scope="session")
def silver():
    return builtin_permittivity("silver")


@pytest.fixture(scope="session")
def lam_500():
    return 2.0 * math.pi / wavenumber(500.0 * THZ)


def make_bent_design(length, n, bend=0.1, twist_amp=0.3, seed=0):
    """Gently bent wire with random twist knots, unit reference normal."""
    rng = np.random.default_rng(seed)
    knots = np.linspace(0.0, length, n)
    s = knots / length
    spine = np.stack([bend * length * np.sin(2.0 * np.pi * s),
                      0.6 * bend * length * np.sin(3.0 * np.pi * s + 0.4),
                      knots - 0.5 * length], axis=1)
    twist = twist_amp * (2.0 * rng.random(n) - 1.0)
    t0 = SpineSpline(knots, spine)(0.0, 1)
    t0 /= np.linalg.norm(t0)
    e = np.array([1.0, 0.0, 0.0])
    e -= (e @ t0) * t0
    e /= np.linalg.norm(e)
    return WireDesign(length=length, knots=knots, spine=spine, twist=twist,
                      reference_normal=e)
