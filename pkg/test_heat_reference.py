#!/usr/bin/env python3
"""
Test the closed-form diffusion references

Verifies that:
- The stationary profile interpolates the reservoirs linearly
- Evolved Gaussians keep their mass and solve the heat equation
- The absorbing-slab survival series has the right limits, symmetry and PDE
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add lorentz_slab to path
sys.path.insert(0, str(Path(__file__).parent))

from lorentz_slab.config import SlabConfig
from lorentz_slab.heat import (
    GaussianBump,
    HeatParams,
    exit_split,
    heat_evolve_free,
    slab_survival,
    stationary_profile,
)

D = 3.0 / 16.0


def test_stationary_profile_is_linear():
    config = SlabConfig(L=2.0, rho1=1.0, rho2=3.0, epsilon=1e-4)
    x = np.linspace(0.0, 2.0, 5)
    assert stationary_profile(config, x) == pytest.approx([1.0, 1.5, 2.0, 2.5, 3.0])
    assert stationary_profile(config, 0.5) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        stationary_profile(config, 2.5)


@pytest.mark.parametrize("dim", [1, 2])
def test_gaussian_mass_is_conserved(dim):
    bump = GaussianBump(amplitude=2.0, sigma=0.4, dim=dim)
    for t in (0.0, 0.5, 3.0):
        assert bump.evolved(t, D).mass == pytest.approx(bump.mass, rel=1e-12)
    assert bump.mass == pytest.approx(2.0 * (2 * math.pi * 0.16) ** (dim / 2))


def test_heat_evolve_at_time_zero():
    bump = GaussianBump(sigma=0.5, center=(0.2, -0.1))
    grid = np.array([[0.0, 0.0], [0.2, -0.1], [1.0, 1.0]])
    assert heat_evolve_free(bump, 0.0, D, grid) == pytest.approx(bump(grid), rel=1e-14)
    assert bump(grid)[1] == pytest.approx(1.0)


def test_heat_evolve_solves_heat_equation():
    bump = GaussianBump(sigma=0.5, dim=1)
    x, t, h, dt = np.array([0.0, 0.3, 0.9]), 0.4, 1e-3, 1e-5
    dudt = (heat_evolve_free(bump, t + dt, D, x) - heat_evolve_free(bump, t - dt, D, x)) / (2 * dt)
    u = lambda y: heat_evolve_free(bump, t, D, y)  # noqa: E731
    lap = (u(x + h) - 2 * u(x) + u(x - h)) / h**2
    assert dudt == pytest.approx(D * lap, rel=1e-4, abs=1e-8)


def test_heat_evolve_rejects_bad_arguments():
    bump = GaussianBump()
    with pytest.raises(ValueError):
        heat_evolve_free(bump, -1.0, D, np.zeros((1, 2)))
    with pytest.raises(ValueError):
        heat_evolve_free(bump, 1.0, 0.0, np.zeros((1, 2)))
    with pytest.raises(ValueError):
        GaussianBump(sigma=0.0)
    with pytest.raises(ValueError):
        GaussianBump(dim=3)


def test_exit_split():
    assert exit_split(0.25, 1.0) == 0.25
    assert exit_split(np.array([0.0, 2.0]), 2.0) == pytest.approx([0.0, 1.0])
    with pytest.raises(ValueError):
        exit_split(-0.1, 1.0)


def test_survival_at_time_zero_is_indicator():
    params = HeatParams(D=D)
    out = slab_survival(np.array([0.0, 0.5, 1.0]), 0.0, params)
    assert list(out) == [0.0, 1.0, 0.0]


def test_survival_is_monotone_and_symmetric():
    params = HeatParams(D=D, L=1.0)
    times = [0.01, 0.1, 0.5, 1.0, 3.0]
    values = [slab_survival(0.3, t, params) for t in times]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert slab_survival(0.3, 0.5, params) == pytest.approx(slab_survival(0.7, 0.5, params), abs=1e-12)
    assert slab_survival(0.5, 1e-4, params) == pytest.approx(1.0, abs=1e-9)
    # long times: first mode only
    late = 4 / math.pi * math.exp(-D * math.pi**2 * 3.0)
    assert slab_survival(0.5, 3.0, params) == pytest.approx(late, rel=1e-6)


def test_survival_solves_heat_equation():
    params = HeatParams(D=D, L=1.0)
    x, t, h, dt = np.array([0.2, 0.5, 0.8]), 0.3, 1e-3, 1e-5
    dudt = (slab_survival(x, t + dt, params) - slab_survival(x, t - dt, params)) / (2 * dt)
    lap = (slab_survival(x + h, t, params) - 2 * slab_survival(x, t, params) + slab_survival(x - h, t, params)) / h**2
    assert dudt == pytest.approx(D * lap, rel=1e-4, abs=1e-7)


def test_survival_rejects_bad_arguments():
    params = HeatParams(D=D)
    with pytest.raises(ValueError):
        slab_survival(0.5, -1.0, params)
    with pytest.raises(ValueError):
        slab_survival(1.5, 1.0, params)


def test_heat_params():
    params = HeatParams.from_config(SlabConfig(mu=1.0, L=2.0, epsilon=1e-4))
    assert params.D == pytest.approx(D, abs=1e-10)
    assert params.L == 2.0
    with pytest.raises(ValueError):
        HeatParams(D=0.0)
    with pytest.raises(ValueError):
        HeatParams(D=1.0, L=-1.0)
