"""Shared fixtures: geometries, displacements, and a session-scoped mesh."""

import numpy as np
import pytest

from beamflow.fourier import PeriodicField
from beamflow.geometry import ReferenceGeometry


@pytest.fixture(scope="session")
def circle_geo():
    return ReferenceGeometry.circle(radius=1.0, tube_width=0.5)


@pytest.fixture(scope="session")
def ellipse_geo():
    return ReferenceGeometry.ellipse(1.0, 0.7, tube_width=0.3)


@pytest.fixture(scope="session")
def wavy_geo():
    """Unit circle with a mild third-harmonic ripple."""
    cx = PeriodicField.from_mode_list([(1, 0.5, 0.0), (3, 0.02, 0.01)])
    cy = PeriodicField.from_mode_list([(1, 0.0, 0.5), (3, 0.01, -0.02)])
    return ReferenceGeometry(cx, cy, tube_width=0.25)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260815)


def random_displacement(rng, k_max=4, scale=0.1):
    """Random smooth displacement rescaled so its sup norm equals ``scale``."""
    coeffs = np.zeros(k_max + 1, dtype=complex)
    coeffs[0] = rng.standard_normal()
    coeffs[1:] = rng.standard_normal(k_max) + 1j * rng.standard_normal(k_max)
    coeffs[1:] /= np.arange(1, k_max + 1) ** 2
    f = PeriodicField(coeffs)
    return f * (scale / f.sup_norm())
