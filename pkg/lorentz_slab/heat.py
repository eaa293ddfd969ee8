"""
Closed-form diffusion references

Oracles the Monte Carlo tiers are checked against: the stationary linear
profile, Gaussian data evolved by the free heat equation, the exit split
of an absorbing slab, and the absorbing-slab survival series.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .angular import green_kubo_d
from .config import SlabConfig

SERIES_TOL = 1e-12
MAX_SERIES_TERMS = 1_000_000

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class HeatParams:
    D: float
    L: float = 1.0

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError("D must be positive")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @classmethod
    def from_config(cls, config: SlabConfig) -> "HeatParams":
        return cls(D=green_kubo_d(config.mu).D, L=config.L)


def stationary_profile(config: SlabConfig, x1: ArrayLike) -> ArrayLike:
    x1 = np.asarray(x1, dtype=float)
    if np.any((x1 < 0) | (x1 > config.L)):
        raise ValueError(f"x1 outside [0, {config.L}]")
    out = (config.rho1 * (config.L - x1) + config.rho2 * x1) / config.L
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GaussianBump:
    """A exp(-|x - c|^2 / 2 sigma^2) in dim dimensions"""

    amplitude: float = 1.0
    sigma: float = 0.5
    center: Tuple[float, float] = (0.0, 0.0)
    dim: int = 2

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")

    @property
    def mass(self) -> float:
        return self.amplitude * (2.0 * math.pi * self.sigma**2) ** (self.dim / 2)

    def _sq_distance(self, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        if self.dim == 1:
            return (grid.reshape(-1) - self.center[0]) ** 2
        grid = grid.reshape(-1, 2)
        return (grid[:, 0] - self.center[0]) ** 2 + (grid[:, 1] - self.center[1]) ** 2

    def __call__(self, grid: np.ndarray) -> np.ndarray:
        return self.amplitude * np.exp(-self._sq_distance(grid) / (2.0 * self.sigma**2))

    def evolved(self, t: float, D: float) -> "GaussianBump":
        """Same mass, variance sigma^2 + 2 D t"""
        var = self.sigma**2 + 2.0 * D * t
        amplitude = self.amplitude * (self.sigma**2 / var) ** (self.dim / 2)
        return GaussianBump(amplitude, math.sqrt(var), self.center, self.dim)


def heat_evolve_free(rho0: GaussianBump, t: float, D: float, grid: np.ndarray) -> np.ndarray:
    """Exact solution of d_t rho = D Laplace rho on the whole space, evaluated on grid"""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if not D > 0:
        raise ValueError("D must be positive")
    return rho0.evolved(t, D)(grid)


def exit_split(x1: ArrayLike, L: float) -> ArrayLike:
    """Probability that diffusion from x1 leaves (0, L) through the right end"""
    x1 = np.asarray(x1, dtype=float)
    if np.any((x1 < 0) | (x1 > L)):
        raise ValueError(f"x1 outside [0, {L}]")
    out = x1 / L
    return float(out) if out.ndim == 0 else out


def slab_survival(x1: ArrayLike, t: float, params: HeatParams) -> ArrayLike:
    """
    P(diffusion from x1 stays in (0, L) up to t)

    Sum over odd n of (4 / n pi) sin(n pi x1 / L) exp(-D (n pi / L)^2 t),
    truncated once the term envelope drops below SERIES_TOL.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    x1 = np.asarray(x1, dtype=float)
    L, D = params.L, params.D
    if np.any((x1 < 0) | (x1 > L)):
        raise ValueError(f"x1 outside [0, {L}]")

    if t == 0:
        out = np.where((x1 > 0) & (x1 < L), 1.0, 0.0)
        return float(out) if out.ndim == 0 else out

    # 4/(n pi) exp(-D (n pi/L)^2 t) < tol fixes the last odd n needed
    n_cut = (L / math.pi) * math.sqrt(max(math.log(4.0 / (math.pi * SERIES_TOL)), 0.0) / (D * t))
    n_max = min(int(n_cut) + 2, 2 * MAX_SERIES_TERMS)
    n = np.arange(1, n_max + 1, 2, dtype=float)
    k = n * math.pi / L
    weights = 4.0 / (n * math.pi) * np.exp(-D * k**2 * t)
    out = np.sin(np.multiply.outer(np.atleast_1d(x1), k)) @ weights
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if x1.ndim == 0 else out
