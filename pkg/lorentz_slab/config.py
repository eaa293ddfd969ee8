"""
Configuration for lorentz_slab experiments

SlabConfig holds every physical and scaling parameter of one experiment
plus the master seed. Derived quantities are properties so they can never
disagree with the fields they come from.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from .debug import get_logger

logger = get_logger(__name__)


class ConfigError(ValueError):
    """Invalid configuration value or config file"""


# Keys accepted in flat key-value config files
PHYSICAL_KEYS = ("L", "rho1", "rho2", "mu", "epsilon", "eta", "seed")
SAMPLING_KEYS = ("samples", "bins", "angles", "mode", "t0", "workers")
MODES = ("fresh", "rerandomized")


@dataclass(frozen=True)
class SlabConfig:
    """Physical parameters of the slab (0, L) x R between two reservoirs"""

    # Geometry and reservoirs
    L: float = 1.0
    rho1: float = 1.0
    rho2: float = 2.0

    # Obstacles: reference intensity, disk radius, divergence factor
    mu: float = 1.0
    epsilon: float = 1e-3
    eta: float = 2.0

    # 64-bit master seed
    seed: int = 20240611

    # Numerical knobs
    cell_factor: float = 8.0  # cell pitch in units of epsilon
    horizon_factor: float = 1000.0  # backward horizon in units of eta
    max_collisions: int = 10_000_000

    def __post_init__(self):
        """Validate configuration"""
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ConfigError("L must be positive and finite")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not self.epsilon < self.L / 4:
            raise ConfigError("epsilon must be smaller than L/4")
        if not (self.rho1 > 0 and self.rho2 > 0):
            raise ConfigError("rho1 and rho2 must be positive")
        if not (self.mu >= 0 and math.isfinite(self.mu)):
            raise ConfigError("mu must be nonnegative and finite")
        if not (self.eta >= 1 and math.isfinite(self.eta)):
            raise ConfigError("eta must be at least 1")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must fit in 64 unsigned bits")
        if self.cell_factor < 1:
            raise ConfigError("cell_factor must be at least 1 (pitch >= epsilon)")
        if self.horizon_factor <= 0:
            raise ConfigError("horizon_factor must be positive")
        if self.max_collisions < 1:
            raise ConfigError("max_collisions must be at least 1")

        if self.scaling_health > 1:
            logger.warning(
                "Scaling health eps^(1/2)*eta^6 = %.3g > 1 (epsilon=%g, eta=%g); "
                "micro/kinetic closeness is not expected at these parameters",
                self.scaling_health, self.epsilon, self.eta,
            )

    @property
    def mu_eps(self) -> float:
        """Obstacle intensity per unit area, eps^-1 * eta * mu"""
        return self.eta * self.mu / self.epsilon

    @property
    def jump_rate(self) -> float:
        """Kinetic collision rate 2 mu eta on the slab clock"""
        return 2.0 * self.mu * self.eta

    @property
    def mean_free_path(self) -> float:
        return math.inf if self.mu == 0 else 1.0 / self.jump_rate

    @property
    def scaling_health(self) -> float:
        return math.sqrt(self.epsilon) * self.eta ** 6

    @property
    def horizon(self) -> float:
        return self.horizon_factor * self.eta

    @property
    def cell_size(self) -> float:
        return self.cell_factor * self.epsilon

    @property
    def gradient(self) -> float:
        return (self.rho2 - self.rho1) / self.L

    def boundary_value(self, side: str) -> Optional[float]:
        """Reservoir density read on a left/right exit, None otherwise"""
        if side == "left":
            return self.rho1
        if side == "right":
            return self.rho2
        return None

    def replace(self, **changes: Any) -> "SlabConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["mu_eps"] = self.mu_eps
        data["scaling_health"] = self.scaling_health
        data["mean_free_path"] = self.mean_free_path if self.mu > 0 else None
        data["horizon"] = self.horizon
        return data


def _coerce(key: str, raw: str) -> Any:
    if key in ("seed", "samples", "bins", "angles", "workers"):
        try:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {raw!r}")
    if key == "mode":
        if raw not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {raw!r}")
        return raw
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw!r}")


def parse_config_text(text: str) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """
    Parse flat `key = value` text

    Returns:
        (physical, sampling) dicts; physical feeds SlabConfig, sampling
        feeds the experiment spec.
    """
    physical: Dict[str, Any] = {}
    sampling: Dict[str, Any] = {}

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in PHYSICAL_KEYS:
            physical[key] = _coerce(key, raw)
        elif key in SAMPLING_KEYS:
            sampling[key] = _coerce(key, raw)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")

    return physical, sampling


def load_config_file(path: str) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    return parse_config_text(text)


def format_config_text(config: SlabConfig, sampling: Optional[Dict[str, Any]] = None) -> str:
    """Inverse of parse_config_text for the documented keys"""
    lines = [f"{key} = {getattr(config, key)!r}" for key in PHYSICAL_KEYS]
    for key, value in (sampling or {}).items():
        if key in SAMPLING_KEYS and value is not None:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
