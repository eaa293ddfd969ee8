#!/usr/bin/env python3
"""
Test the linear Boltzmann jump process and its estimators

Verifies that:
- Jump counts are Poisson and deflections have the hard-disk moments
- Stopped and fictitious representations agree
- Boundary and interior parts of the solution add up
- Survival extrapolated in 1/eta matches the diffusive slab series
- The killed semigroup composes and keeps one stream per call and point
- Estimates do not depend on the number of workers or the horizon
- Profiles carry no flux at equilibrium and a negative, constant flux when rho2 > rho1
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

# Add lorentz_slab to path
sys.path.insert(0, str(Path(__file__).parent))

from lorentz_slab.config import SlabConfig
from lorentz_slab.estimators import BoundedDatum
from lorentz_slab.geometry import ParticleState, Side
from lorentz_slab.heat import GaussianBump, HeatParams, slab_survival
from lorentz_slab.kinetic import (
    BoundaryData,
    apply_S0,
    apply_S0_composed,
    diffusive_limit_error,
    estimate_h,
    estimate_h_out,
    estimate_h_stationary,
    kinetic_profiles,
    richardson_survival,
    run_paths,
    sample_jump_path,
    survival_probability,
)
from lorentz_slab.streams import PROFILE_BLOCK

CONFIG = SlabConfig(mu=1.0, eta=2.0, epsilon=1e-4, seed=77)
FLAT = CONFIG.replace(rho1=1.0, rho2=1.0)


def test_zero_horizon_path_has_no_jumps():
    rng = np.random.default_rng(0)
    path = sample_jump_path(ParticleState.from_angle(0.5, 0.0, 0.3), 0.0, CONFIG, rng)
    assert path.n_jumps == 0
    assert not path.exit.exited
    assert path.end_position == (0.5, 0.0)


def test_ballistic_path_exits_left():
    rng = np.random.default_rng(0)
    config = CONFIG.replace(mu=0.0)
    path = sample_jump_path(ParticleState.from_angle(0.25, 0.0, 0.0), 10.0, config, rng)
    assert path.n_jumps == 0
    assert path.exit.side is Side.LEFT
    assert path.exit.tau_elapsed == pytest.approx(0.25)
    assert path.exit.boundary_value == config.rho1
    assert path.motion[0] == pytest.approx([-1.0, 0.0])


def test_jump_path_structure():
    rng = np.random.default_rng(4)
    for _ in range(20):
        path = sample_jump_path(ParticleState.from_angle(0.5, 0.0, 1.0), 5.0, CONFIG, rng)
        assert len(path.legs()) == path.n_jumps + 1
        assert path.velocities.shape == (path.n_jumps + 1, 2)
        assert np.all(np.abs(path.impact_parameters) <= 1.0)
        if path.exit.exited:
            assert path.end_position[0] in (0.0, CONFIG.L)


def test_jump_counts_are_poisson():
    n, rate, horizon = 20000, 1.5, 2.0
    rng = np.random.default_rng(11)
    zeros = np.zeros(n)
    batch = run_paths(zeros, zeros, zeros, horizon, rate, math.inf, rng, stop_at_boundary=False)
    lam = rate * horizon

    edges = np.arange(9)
    observed = np.array([np.count_nonzero(batch.n_jumps == k) for k in edges[:-1]] + [np.count_nonzero(batch.n_jumps >= 8)])
    probs = np.append(stats.poisson.pmf(edges[:-1], lam), stats.poisson.sf(7, lam))
    result = stats.chisquare(observed, probs * n)
    assert result.pvalue > 1e-3
    assert not batch.exited.any()


@pytest.mark.parametrize("k", [1, 2, 3])
def test_deflection_moments(k):
    n = 20000
    rng = np.random.default_rng(100 + k)
    zeros = np.zeros(n)
    batch = run_paths(zeros, zeros, zeros, 1.0, 1.0, math.inf, rng, stop_at_boundary=False)
    single = batch.phi[batch.n_jumps == 1]
    values = np.cos(k * single)
    mean = values.mean()
    stderr = values.std(ddof=1) / math.sqrt(values.size)
    assert abs(mean - (-1.0 / (4 * k * k - 1))) < 4 * stderr


def test_h_out_at_time_zero():
    est = estimate_h_out(0.5, 0.0, 0.0, CONFIG, 10)
    assert est.value == 0.0 and est.stderr == 0.0


def test_exit_and_survival_are_complementary():
    t, n = 0.4, 8192
    h_out = estimate_h_out(0.3, 0.5, t, FLAT, n)
    (stay,) = apply_S0(1.0, t, FLAT, [(0.3, 0.5)], n)
    total = h_out.value + stay.value
    assert abs(total - 1.0) < 4 * math.hypot(h_out.stderr, stay.stderr)


def test_stopped_and_fictitious_agree():
    t, n = 0.6, 8192
    stopped = estimate_h_out(0.4, 2.0, t, CONFIG, n, representation="stopped")
    fictitious = estimate_h_out(0.4, 2.0, t, CONFIG, n, representation="fictitious")
    assert abs(stopped.z_against(fictitious)) < 4
    with pytest.raises(ValueError):
        estimate_h_out(0.4, 2.0, t, CONFIG, n, representation="thinned")


def test_semigroup_trivial_cases():
    ell = BoundedDatum(lambda x1, x2, phi: np.cos(phi) ** 2, bound=1.0, name="cos2")
    at_zero, outside = apply_S0(ell, 0.0, CONFIG, [(0.5, 0.3), (1.2, 0.3)], 16)
    assert at_zero.value == pytest.approx(math.cos(0.3) ** 2)
    assert outside.value == 0.0

    (edge,) = apply_S0(ell, 0.5, CONFIG, [(0.0, 0.3)], 16)
    assert edge.value == 0.0


def test_semigroup_composes():
    ell = BoundedDatum(lambda x1, x2, phi: np.cos(phi) ** 2, bound=1.0, name="cos2")
    points = [(0.3, 0.4), (0.7, 2.5)]
    direct = apply_S0(ell, 0.5, CONFIG, points, 8192)
    composed = apply_S0_composed(ell, 0.2, 0.3, CONFIG, points, 2048, 4)
    for a, b in zip(direct, composed):
        assert abs(a.z_against(b)) < 4


def test_semigroup_streams_separate_calls_and_points():
    ell = BoundedDatum(lambda x1, x2, phi: np.cos(phi) ** 2, bound=1.0, name="cos2")
    outside = [(1.5, 0.0)] * 4096
    late = apply_S0(ell, 0.5, CONFIG, outside + [(0.5, 0.3)], 64, stream_id=0)[-1]
    first = apply_S0(ell, 0.5, CONFIG, [(0.5, 0.3)], 64, stream_id=1)[0]
    again = apply_S0(ell, 0.5, CONFIG, [(0.5, 0.3)], 64, stream_id=1)[0]
    assert first.value == again.value
    assert late.value != first.value


def test_survival_trivial_cases():
    assert survival_probability(0.5, 0.0, CONFIG, 10).value == 1.0
    with pytest.raises(ValueError):
        survival_probability(0.0, 1.0, CONFIG, 10)
    values = [survival_probability(0.5, t, CONFIG, 4096).value for t in (0.5, 1.0, 2.0)]
    assert values[0] > values[1] > values[2]


def test_survival_matches_diffusion_series():
    config = SlabConfig(mu=1.0, eta=10.0, epsilon=1e-4, seed=3)
    t_diffusive = 0.2
    coarse, fine, value, stderr = richardson_survival(0.5, t_diffusive, config, 4096)
    reference = slab_survival(0.5, t_diffusive, HeatParams.from_config(config))
    assert coarse.capped_fraction == 0.0 and fine.capped_fraction == 0.0
    assert stderr == pytest.approx(math.hypot(2 * fine.stderr, coarse.stderr))
    assert abs(value - reference) < 3 * stderr


def test_kinetic_solution_parts_add_up():
    f0 = BoundedDatum(lambda x1, x2, phi: 0.5 + 0.5 * np.sin(phi), bound=1.0, name="f0")
    sol = estimate_h(0.5, 1.0, 0.3, CONFIG, 4096, f0=f0)
    assert sol.total.value == pytest.approx(sol.h_out.value + sol.h_in.value, abs=1e-12)
    assert 0.0 <= sol.h_out.value <= CONFIG.rho2

    start = estimate_h(0.5, 1.0, 0.0, CONFIG, 10, f0=f0)
    assert start.h_out.value == 0.0
    assert start.total.value == pytest.approx(0.5 + 0.5 * math.sin(1.0))


def test_stationary_with_equal_reservoirs():
    config = CONFIG.replace(rho1=1.5, rho2=1.5)
    est = estimate_h_stationary(0.6, 0.2, config, 2048)
    assert est.value == pytest.approx(1.5)
    assert est.stderr == pytest.approx(0.0, abs=1e-15)
    assert est.n_capped == 0


def test_stationary_ballistic():
    config = CONFIG.replace(mu=0.0)
    assert estimate_h_stationary(0.6, 0.2, config, 8).value == config.rho1
    assert estimate_h_stationary(0.6, math.pi - 0.2, config, 8).value == config.rho2


def test_estimates_are_worker_invariant():
    serial = estimate_h_out(0.5, 0.7, 1.0, CONFIG, 3000, workers=1)
    pooled = estimate_h_out(0.5, 0.7, 1.0, CONFIG, 3000, workers=4)
    assert serial.value == pooled.value
    assert serial.stderr == pooled.stderr


def test_boundary_data():
    data = BoundaryData.from_config(CONFIG)
    assert data.evaluate(0.0, 0.5, CONFIG.L) == CONFIG.rho1
    assert data.evaluate(CONFIG.L, -0.5, CONFIG.L) == CONFIG.rho2
    with pytest.raises(ValueError):
        data.evaluate(0.0, -0.5, CONFIG.L)
    with pytest.raises(ValueError):
        data.evaluate(0.5, 0.5, CONFIG.L)
    with pytest.raises(ValueError):
        BoundaryData(0.0, 1.0)


def test_kinetic_profiles_bounds():
    profile, flux = kinetic_profiles(CONFIG, 2, 16, 64, workers=1)
    assert profile.density.shape == (2,)
    assert np.all((profile.density >= CONFIG.rho1) & (profile.density <= CONFIG.rho2))
    assert not profile.unreliable.any()
    assert flux.flux_x.shape == (2,)


def test_kinetic_profiles_are_worker_invariant():
    n = PROFILE_BLOCK + 64
    serial, serial_flux = kinetic_profiles(CONFIG, 2, 16, n, workers=1)
    pooled, pooled_flux = kinetic_profiles(CONFIG, 2, 16, n, workers=3)
    assert np.array_equal(serial.density, pooled.density)
    assert np.array_equal(serial_flux.flux_x, pooled_flux.flux_x)
    assert np.all(serial.n_samples == 16 * n)


def test_ballistic_profiles_have_no_tangent_nodes():
    config = CONFIG.replace(mu=0.0)
    profile, flux = kinetic_profiles(config, 2, 16, 8, workers=1)
    assert np.all(profile.capped_fraction == 0.0)
    assert not profile.unreliable.any()
    assert np.all(profile.density == 1.5)
    assert np.all(np.isfinite(flux.flux_x))


def test_equilibrium_profile_has_no_flux():
    profile, flux = kinetic_profiles(FLAT, 3, 16, 256, workers=1)
    assert np.all(profile.density == 1.0)
    assert np.all(profile.density_stderr == 0.0)
    assert np.all(np.abs(flux.flux_x) < 1e-12)


def test_flux_runs_down_the_gradient_and_is_constant():
    config = SlabConfig(mu=1.0, eta=5.0, epsilon=1e-4, rho1=1.0, rho2=2.0, seed=19)
    _, flux = kinetic_profiles(config, 3, 16, 2000)
    assert np.all(flux.flux_x + 3 * flux.flux_stderr < 0)
    for i in range(3):
        for j in range(i + 1, 3):
            gap = abs(flux.flux_x[i] - flux.flux_x[j])
            assert gap < 4 * math.hypot(flux.flux_stderr[i], flux.flux_stderr[j])


def test_stationary_estimate_ignores_horizon():
    long = estimate_h_stationary(0.5, 0.3, CONFIG, 2000, stream_id=4)
    short = estimate_h_stationary(0.5, 0.3, CONFIG.replace(horizon_factor=100.0), 2000, stream_id=4)
    assert long.n_capped == 0 and short.n_capped == 0
    assert long.value == short.value


def test_diffusive_limit_at_time_zero():
    bump = GaussianBump(sigma=0.5, dim=1)
    result = diffusive_limit_error(bump, 0.0, 10.0, 16, np.linspace(-1, 1, 5))
    assert result.sup_error == pytest.approx(0.0, abs=1e-12)
    assert result.to_dict()["eta"] == 10.0
    with pytest.raises(ValueError):
        diffusive_limit_error(bump, 0.1, 0.5, 16, np.linspace(-1, 1, 5))
