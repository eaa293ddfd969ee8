#!/usr/bin/env python3
"""
Test the scatterer field and exact ray-disk queries

Verifies that:
- first_hit returns the right collision, boundary exit or no event
- Scattering geometry matches the impact parameter convention, uniform over random rays
- Lazy fields are deterministic, Poisson distributed across realizations and conditioned
- Results do not depend on the hashing pitch
- Field dumps round-trip through CSV
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
from lorentz_slab.geometry import (
    BoundaryExit,
    CollisionEvent,
    ContractViolation,
    NoEvent,
    ParticleState,
    ScattererField,
    Side,
    build_field,
    first_hit,
    specular_reflect,
)

EPS = 0.05


@pytest.fixture
def config():
    return SlabConfig(epsilon=EPS, mu=1.0, eta=1.0, seed=123)


def test_head_on_collision(config):
    field = ScattererField.from_centers(config, [(0.5, 0.0)])
    ev = first_hit(ParticleState((0.2, 0.0), (1.0, 0.0)), field)
    assert isinstance(ev, CollisionEvent)
    assert ev.time == pytest.approx(0.3 - EPS, abs=1e-12)
    assert ev.position == pytest.approx((0.5 - EPS, 0.0), abs=1e-12)
    assert ev.normal == pytest.approx((-1.0, 0.0), abs=1e-12)
    assert ev.impact_parameter == pytest.approx(0.0, abs=1e-12)
    assert ev.v_out == pytest.approx((-1.0, 0.0), abs=1e-12)
    assert ev.center == (0.5, 0.0)


def test_offset_collision_rotates_by_pi_plus_two_alpha(config):
    field = ScattererField.from_centers(config, [(0.5, EPS / 2)])
    ev = first_hit(ParticleState((0.2, 0.0), (1.0, 0.0)), field)
    assert isinstance(ev, CollisionEvent)
    assert ev.impact_parameter == pytest.approx(0.5, abs=1e-12)
    theta = math.pi + 2 * math.asin(0.5)
    assert ev.v_out == pytest.approx((math.cos(theta), math.sin(theta)), abs=1e-12)
    # contact point lies on the circle
    assert math.dist(ev.position, ev.center) == pytest.approx(EPS, abs=1e-12)


def test_grazing_ray_misses(config):
    field = ScattererField.from_centers(config, [(0.5, EPS)])
    ev = first_hit(ParticleState((0.2, 0.0), (1.0, 0.0)), field)
    assert isinstance(ev, BoundaryExit)
    assert ev.side is Side.RIGHT
    assert ev.time == pytest.approx(0.8)
    assert ev.position == (config.L, 0.0)


def test_left_exit_and_horizon(config):
    empty = ScattererField.from_centers(config, np.empty((0, 2)))
    ev = first_hit(ParticleState((0.3, 0.1), (-1.0, 0.0)), empty)
    assert isinstance(ev, BoundaryExit) and ev.side is Side.LEFT
    assert ev.position == (0.0, 0.1)

    ev = first_hit(ParticleState((0.3, 0.1), (-1.0, 0.0)), empty, horizon=0.1)
    assert isinstance(ev, NoEvent) and ev.horizon == 0.1

    assert isinstance(first_hit(ParticleState((0.3, 0.1), (-1.0, 0.0)), empty, horizon=0.0), NoEvent)


def test_parallel_ray_in_empty_field_has_no_event(config):
    empty = ScattererField.from_centers(config, np.empty((0, 2)))
    ev = first_hit(ParticleState((0.3, 0.0), (0.0, 1.0)), empty)
    assert isinstance(ev, NoEvent)


def test_degenerate_direction_rejected(config):
    field = ScattererField.from_centers(config, [(0.5, 0.0)])
    with pytest.raises(ContractViolation):
        first_hit(ParticleState((0.2, 0.0), (0.5, 0.0)), field)
    with pytest.raises(ContractViolation):
        first_hit(ParticleState((0.2, 0.0), (1.0, 0.0)), field, horizon=-1.0)


def test_departing_disk_excluded(config):
    field = ScattererField.from_centers(config, [(0.5, 0.0)])
    ev = first_hit(ParticleState((0.2, 0.0), (1.0, 0.0)), field)
    after = first_hit(ParticleState(ev.position, ev.v_out), field, exclude=ev.center)
    assert isinstance(after, BoundaryExit) and after.side is Side.LEFT


def test_particle_state_check(config):
    with pytest.raises(ContractViolation):
        ParticleState((1.5, 0.0), (1.0, 0.0)).check(config.L)
    with pytest.raises(ContractViolation):
        ParticleState((0.5, 0.0), (1.0, 1.0)).check(config.L)
    ParticleState.from_angle(0.0, 0.0, 2.0).check(config.L)


def test_specular_reflection_preserves_speed():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.uniform(-math.pi, math.pi, 2)
        out = specular_reflect((math.cos(a), math.sin(a)), (math.cos(b), math.sin(b)))
        assert math.hypot(*out) == pytest.approx(1.0, abs=1e-14)


def test_field_is_deterministic(config):
    a = build_field(config, 3)
    b = build_field(config, 3)
    a.materialize(-1.0, 1.0)
    b.materialize(-1.0, 1.0)
    assert len(a.all_centers()) > 0
    assert np.array_equal(a.all_centers(), b.all_centers())

    other = build_field(config, 4)
    other.materialize(-1.0, 1.0)
    assert not np.array_equal(a.all_centers(), other.all_centers())


def test_cell_query_matches_generated_cells(config):
    field = build_field(config, 0)
    field.materialize(0.0, 1.0)
    for (ix, iy), centers in list(field.generated_cells.items())[:20]:
        assert np.array_equal(field.centers_in_cell(ix, iy), centers)


def test_poisson_count_and_support():
    config = SlabConfig(epsilon=0.01, mu=1.0, eta=2.0, seed=9)
    field = build_field(config, 0)
    field.materialize(0.0, 10.0)
    centers = field.all_centers()
    assert np.all((centers[:, 0] >= 0.0) & (centers[:, 0] <= config.L))

    inside = np.count_nonzero((centers[:, 1] >= 0.0) & (centers[:, 1] < 10.0))
    expected = config.mu_eps * config.L * 10.0
    assert abs(inside - expected) < 4 * math.sqrt(expected), f"{inside} disks, expected {expected}"


def test_impact_parameter_is_uniform_for_random_rays(config):
    field = ScattererField.from_centers(config, [(0.5, 0.0)])
    rng = np.random.default_rng(31)
    rhos = []
    for _ in range(2000):
        phi = rng.uniform(-math.pi, math.pi)
        u = (math.cos(phi), math.sin(phi))
        s = rng.uniform(-EPS, EPS)
        start = (0.5 - 0.2 * u[0] - s * u[1], -0.2 * u[1] + s * u[0])
        ev = first_hit(ParticleState(start, u), field)
        assert isinstance(ev, CollisionEvent)
        assert ev.impact_parameter == pytest.approx(-s / EPS, abs=1e-9)
        rhos.append(ev.impact_parameter)
    assert stats.kstest(rhos, stats.uniform(loc=-1.0, scale=2.0).cdf).pvalue > 1e-3


def test_window_counts_are_poisson_across_realizations():
    config = SlabConfig(epsilon=0.05, mu=1.0, eta=1.0, seed=17)
    lam = config.mu_eps * config.L * 1.0
    counts = []
    for r in range(400):
        field = build_field(config, r)
        field.materialize(0.0, 1.0)
        centers = field.all_centers()
        counts.append(np.count_nonzero((centers[:, 1] >= 0.0) & (centers[:, 1] < 1.0)))
    counts = np.array(counts)

    edges = [12, 16, 19, 22, 26]
    observed = np.bincount(np.searchsorted(edges, counts, side="left"), minlength=len(edges) + 1)
    cdf = stats.poisson.cdf(edges, lam)
    expected = len(counts) * np.diff(np.concatenate(([0.0], cdf, [1.0])))
    assert stats.chisquare(observed, expected).pvalue > 1e-3
    assert stats.chi2.sf(np.sum((counts - lam) ** 2) / lam, len(counts)) > 1e-3


def test_zero_intensity_field_is_empty():
    field = build_field(SlabConfig(mu=0.0), 0)
    field.materialize(-1.0, 1.0)
    assert len(field.all_centers()) == 0
    ev = first_hit(ParticleState((0.5, 0.0), (0.6, 0.8)), field)
    assert isinstance(ev, BoundaryExit) and ev.side is Side.RIGHT


def test_conditioning_removes_nearby_disks():
    config = SlabConfig(epsilon=0.05, mu=4.0, eta=2.0, seed=5)
    point = (0.5, 0.5)
    removed = 0
    for r in range(10):
        field = build_field(config, r, condition_point=point)
        centers = field.all_centers()
        assert np.all(np.hypot(centers[:, 0] - point[0], centers[:, 1] - point[1]) > config.epsilon)
        removed += field.n_conditioned
        assert field.conditioned == (field.n_conditioned > 0)
    assert removed > 0


def test_results_independent_of_pitch(config):
    lazy = build_field(config, 1)
    lazy.materialize(-2.0, 2.0)
    static = ScattererField.from_centers(config, lazy.all_centers())
    coarse = static.reindexed(cell_size=3 * config.epsilon)

    for phi in np.linspace(-math.pi, math.pi, 13, endpoint=False):
        state = ParticleState.from_angle(0.5, 0.0, phi)
        events = [first_hit(state, f, horizon=0.5) for f in (lazy, static, coarse)]
        assert events[0] == events[1] == events[2]


def test_field_csv_round_trip(config, tmp_path):
    field = build_field(config, 2)
    field.materialize(-0.5, 0.5)
    path = tmp_path / "field.csv"
    field.dump_csv(path)

    loaded = ScattererField.load_csv(path, config)
    a, b = field.all_centers(), loaded.all_centers()
    order_a, order_b = np.lexsort(a.T), np.lexsort(b.T)
    assert np.array_equal(a[order_a], b[order_b])


def test_field_csv_requires_columns(config, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n0.5,0.0\n", encoding="utf-8")
    with pytest.raises(ContractViolation):
        ScattererField.load_csv(path, config)
