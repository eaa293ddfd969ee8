#!/usr/bin/env python3
"""
Test SlabConfig and the flat config-file format

Verifies that:
- Derived quantities follow the fields they come from
- Invalid parameters are rejected at construction
- Config files parse into physical and sampling parts and round-trip
- Random streams are reproducible and keyed
"""

import logging
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add lorentz_slab to path
sys.path.insert(0, str(Path(__file__).parent))

from lorentz_slab.config import (
    ConfigError,
    SlabConfig,
    format_config_text,
    load_config_file,
    parse_config_text,
)
from lorentz_slab.streams import Purpose, stream, stream_key


def test_defaults_and_derived_quantities():
    config = SlabConfig()
    assert config.L == 1.0 and config.rho1 == 1.0 and config.rho2 == 2.0
    assert config.jump_rate == pytest.approx(2 * config.mu * config.eta)
    assert config.mean_free_path == pytest.approx(1 / config.jump_rate)
    assert config.mu_eps == pytest.approx(config.eta * config.mu / config.epsilon)
    assert config.horizon == pytest.approx(1000 * config.eta)
    assert config.cell_size == pytest.approx(8 * config.epsilon)
    assert config.gradient == pytest.approx(1.0)
    assert config.scaling_health == pytest.approx(math.sqrt(config.epsilon) * config.eta**6)


def test_zero_intensity_has_infinite_free_path():
    config = SlabConfig(mu=0.0)
    assert math.isinf(config.mean_free_path)
    assert config.to_dict()["mean_free_path"] is None


@pytest.mark.parametrize(
    "changes",
    [
        {"L": 0.0},
        {"L": math.inf},
        {"epsilon": 0.0},
        {"epsilon": 0.3},
        {"rho1": 0.0},
        {"rho2": -1.0},
        {"mu": -0.1},
        {"eta": 0.5},
        {"seed": -1},
        {"seed": 2**64},
        {"cell_factor": 0.5},
        {"max_collisions": 0},
    ],
)
def test_invalid_parameters_rejected(changes):
    with pytest.raises(ConfigError):
        SlabConfig(**changes)


def test_scaling_health_warning(caplog):
    with caplog.at_level(logging.WARNING):
        SlabConfig(epsilon=1e-3, eta=10.0)
    assert any("Scaling health" in r.getMessage() for r in caplog.records)


def test_boundary_values():
    config = SlabConfig(rho1=1.5, rho2=3.0)
    assert config.boundary_value("left") == 1.5
    assert config.boundary_value("right") == 3.0
    assert config.boundary_value("none") is None


def test_replace_revalidates():
    config = SlabConfig()
    assert config.replace(eta=5.0).eta == 5.0
    with pytest.raises(ConfigError):
        config.replace(eta=0.1)


def test_parse_config_text_splits_keys():
    text = """
    # slab run
    L = 2
    rho1 = 1.0
    rho2 = 3   # right reservoir
    mu = 0.5
    epsilon = 1e-3
    eta = 5
    seed = 42
    samples = 1e4
    bins = 8
    mode = rerandomized
    t0 = 2.5
    """
    physical, sampling = parse_config_text(text)
    assert physical == {"L": 2.0, "rho1": 1.0, "rho2": 3.0, "mu": 0.5, "epsilon": 1e-3, "eta": 5.0, "seed": 42}
    assert sampling == {"samples": 10000, "bins": 8, "mode": "rerandomized", "t0": 2.5}
    assert SlabConfig(**physical).L == 2.0


@pytest.mark.parametrize(
    "text",
    ["L 1", "color = red", "L = wide", "seed = 1.5x", "mode = sometimes"],
)
def test_parse_config_text_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_config_file_round_trip(tmp_path):
    config = SlabConfig(L=1.5, rho1=0.5, rho2=2.5, mu=2.0, epsilon=0.01, eta=3.0, seed=7)
    path = tmp_path / "slab.cfg"
    path.write_text(format_config_text(config, {"samples": 100, "mode": "fresh"}), encoding="utf-8")
    physical, sampling = load_config_file(str(path))
    assert SlabConfig(**physical) == config
    assert sampling == {"samples": 100, "mode": "fresh"}


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / "absent.cfg"))


def test_streams_are_keyed_and_reproducible():
    a = stream(11, Purpose.PATH, 1, 2).random(5)
    b = stream(11, Purpose.PATH, 1, 2).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, stream(11, Purpose.PATH, 1, 3).random(5))
    assert not np.array_equal(a, stream(11, Purpose.FIELD, 1, 2).random(5))
    assert not np.array_equal(a, stream(12, Purpose.PATH, 1, 2).random(5))


def test_stream_keys_separate_negative_indices():
    assert stream_key(5, Purpose.FIELD, -1) != stream_key(5, Purpose.FIELD, 1)
    assert stream_key(2**40 + 3, Purpose.FIELD) != stream_key(3, Purpose.FIELD)
