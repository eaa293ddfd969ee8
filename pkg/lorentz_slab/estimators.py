"""
Monte Carlo estimate containers, bounded data and the sample farm

Every estimator in the package produces per-sample values, hands them to
Estimate.from_samples, and reports mean, standard error and the fraction of
samples that never reached a boundary (capped) or were touched by the
conditioning near the test point.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from .debug import get_logger

logger = get_logger(__name__)

# Samples that fail to exit above this fraction make an estimate unreliable
CAPPED_TOLERANCE = 1e-3


class UnboundedDatumError(ValueError):
    """Initial datum or observable registered without a finite bound"""


@dataclass(frozen=True)
class Estimate:
    """Mean and standard error of one Monte Carlo quantity"""

    value: float
    stderr: float
    n_used: int
    n_capped: int = 0
    n_conditioned: int = 0
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_total(self) -> int:
        return self.n_used + self.n_capped

    @property
    def capped_fraction(self) -> float:
        return self.n_capped / self.n_total if self.n_total else 0.0

    @property
    def conditioned_fraction(self) -> float:
        return self.n_conditioned / self.n_total if self.n_total else 0.0

    @property
    def unreliable(self) -> bool:
        return self.n_used == 0 or self.capped_fraction > CAPPED_TOLERANCE

    @classmethod
    def from_samples(
        cls,
        values: np.ndarray,
        capped: Optional[np.ndarray] = None,
        conditioned: Optional[np.ndarray] = None,
        **meta: Any,
    ) -> "Estimate":
        values = np.asarray(values, dtype=float)
        capped = np.zeros(values.shape, dtype=bool) if capped is None else np.asarray(capped, dtype=bool)
        used = values[~capped]
        n = int(used.size)

        if n == 0:
            mean, stderr = math.nan, math.nan
        elif n == 1:
            mean, stderr = float(used[0]), 0.0
        else:
            mean = float(used.mean())
            stderr = float(used.std(ddof=1) / math.sqrt(n))

        n_conditioned = 0 if conditioned is None else int(np.count_nonzero(conditioned))
        est = cls(mean, stderr, n, int(np.count_nonzero(capped)), n_conditioned, dict(meta))
        if n and est.capped_fraction > CAPPED_TOLERANCE:
            logger.warning(
                "Unreliable estimate: %d of %d samples capped (%.2e > %.0e)",
                est.n_capped, est.n_total, est.capped_fraction, CAPPED_TOLERANCE,
            )
        return est

    @classmethod
    def exact(cls, value: float, n: int = 1, **meta: Any) -> "Estimate":
        return cls(float(value), 0.0, int(n), meta=dict(meta))

    def z_against(self, other: "Estimate") -> float:
        """Difference over the combined standard error"""
        diff = self.value - other.value
        se = math.hypot(self.stderr, other.stderr)
        if se == 0:
            return 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return diff / se

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n_used": self.n_used,
            "capped_fraction": self.capped_fraction,
            "conditioned_fraction": self.conditioned_fraction,
            "unreliable": self.unreliable,
            **self.meta,
        }


# Vectorized datum signature: (x1, x2, phi) arrays -> values array
DatumFunc = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class BoundedDatum:
    """
    A phase-space function with a declared finite bound

    Initial data f0 and semigroup observables are only accepted through
    this wrapper; evaluation checks the bound on every call.
    """

    def __init__(self, func: DatumFunc, bound: float, name: str = "datum"):
        if bound is None or not math.isfinite(bound) or bound < 0:
            raise UnboundedDatumError(f"{name}: a finite nonnegative bound is required, got {bound!r}")
        self.func = func
        self.bound = float(bound)
        self.name = name

    @classmethod
    def constant(cls, value: float) -> "BoundedDatum":
        value = float(value)
        return cls(lambda x1, x2, phi: np.full(np.shape(x1), value), abs(value), name=f"const({value:g})")

    def __call__(self, x1: np.ndarray, x2: np.ndarray, phi: np.ndarray) -> np.ndarray:
        out = np.asarray(self.func(np.asarray(x1, float), np.asarray(x2, float), np.asarray(phi, float)), dtype=float)
        out = np.broadcast_to(out, np.shape(x1)).astype(float)
        if out.size and not np.all(np.abs(out) <= self.bound * (1 + 1e-12)):
            raise UnboundedDatumError(f"{self.name}: value exceeds declared bound {self.bound}")
        return out


def as_datum(obj: Any, name: str = "datum") -> BoundedDatum:
    if isinstance(obj, BoundedDatum):
        return obj
    if isinstance(obj, (int, float)) and math.isfinite(obj):
        return BoundedDatum.constant(obj)
    raise UnboundedDatumError(f"{name} must be a number or a BoundedDatum with a declared bound")


def workers_from_env(default: int = 1) -> int:
    """Worker count from LORENTZ_WORKERS (a .env file is honored)"""
    load_dotenv()
    raw = os.getenv("LORENTZ_WORKERS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("Ignoring non-integer LORENTZ_WORKERS=%r", raw)
        return default


class SampleFarm:
    """
    Runs a chunked sample function over index ranges on a thread pool

    Chunk boundaries depend only on chunk_size, and results are reassembled
    in index order, so the output is identical for any worker count.
    """

    def __init__(self, workers: Optional[int] = None, chunk_size: int = 1024):
        if chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        self.workers = workers if workers is not None else workers_from_env()
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        self.chunk_size = chunk_size

    def chunks(self, n: int) -> List[range]:
        return [range(start, min(start + self.chunk_size, n)) for start in range(0, n, self.chunk_size)]

    def run(self, func: Callable[[int, int], Any], n: int, label: str = "samples") -> List[Any]:
        """
        Execute func(start, stop) for every chunk of [0, n)

        Returns:
            Per-chunk results in index order
        """
        chunks = self.chunks(n)
        results: List[Any] = [None] * len(chunks)

        if self.workers == 1 or len(chunks) <= 1:
            for i, chunk in enumerate(chunks):
                results[i] = func(chunk.start, chunk.stop)
                logger.debug("%s: chunk %d/%d done", label, i + 1, len(chunks))
            return results

        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            future_to_index = {
                executor.submit(func, chunk.start, chunk.stop): i
                for i, chunk in enumerate(chunks)
            }
            done = 0
            for future in as_completed(future_to_index):
                results[future_to_index[future]] = future.result()
                done += 1
                logger.debug("%s: chunk %d/%d done", label, done, len(chunks))

        return results

    def gather(self, func: Callable[[int, int], np.ndarray], n: int, label: str = "samples") -> np.ndarray:
        """Concatenate per-index arrays returned by func(start, stop)"""
        if n == 0:
            return np.empty(0)
        return np.concatenate(self.run(func, n, label))


# Profile assembly

def bin_centers(L: float, bins: int) -> np.ndarray:
    if bins < 1:
        raise ValueError("bins must be at least 1")
    edges = np.linspace(0.0, L, bins + 1)
    return 0.5 * (edges[:-1] + edges[1:])


def angle_nodes(m: int) -> np.ndarray:
    """Uniform angles phi_j = -pi + 2 pi j / m"""
    return -np.pi + 2.0 * np.pi * np.arange(m) / m


def profile_angle_nodes(m: int) -> np.ndarray:
    """Half-step angles phi_j = -pi + 2 pi (j + 1/2) / m; no node is tangent to the walls"""
    return -np.pi + 2.0 * np.pi * (np.arange(m) + 0.5) / m


def check_angle_count(m: int) -> None:
    if m < 16 or m % 2:
        raise ValueError(f"angle_nodes must be even and at least 16, got {m}")


@dataclass
class DensityProfile:
    x_centers: np.ndarray
    density: np.ndarray
    density_stderr: np.ndarray
    capped_fraction: np.ndarray
    n_samples: np.ndarray
    unreliable: np.ndarray
    # Coefficient of cos(phi) in the angular profile per bin: 2 <cos(phi) f>
    cos_mode: Optional[np.ndarray] = None
    cos_mode_stderr: Optional[np.ndarray] = None

    def l2_distance(self, reference: np.ndarray, L: float) -> float:
        """Midpoint-rule L2 distance from reference values at the bin centers"""
        diff = self.density - np.asarray(reference, dtype=float)
        return float(np.sqrt(np.sum(diff**2) * L / len(diff)))


@dataclass
class FluxEstimate:
    x_centers: np.ndarray
    flux_x: np.ndarray
    flux_stderr: np.ndarray


def assemble_profiles(
    x_centers: np.ndarray,
    phis: np.ndarray,
    grid: Sequence[Sequence[Estimate]],
    eta: float,
) -> "tuple[DensityProfile, FluxEstimate]":
    """
    Angular averages over a (bin, angle) grid of point estimates

    Uniform nodes with equal weights; each grid point uses independent
    samples, so standard errors add in quadrature.
    """
    values = np.array([[e.value for e in row] for row in grid], dtype=float)
    errors = np.array([[e.stderr for e in row] for row in grid], dtype=float)
    capped = np.array([[e.n_capped for e in row] for row in grid], dtype=float)
    totals = np.array([[e.n_total for e in row] for row in grid], dtype=float)
    m = values.shape[1]
    cos = np.cos(phis)

    density = values.mean(axis=1)
    density_se = np.sqrt((errors**2).sum(axis=1)) / m
    cos_mean = (values * cos).mean(axis=1)
    cos_mean_se = np.sqrt(((errors * cos) ** 2).sum(axis=1)) / m
    capped_fraction = capped.sum(axis=1) / np.maximum(totals.sum(axis=1), 1)
    unreliable = np.array([any(e.unreliable for e in row) for row in grid])

    profile = DensityProfile(
        x_centers=np.asarray(x_centers, dtype=float),
        density=density,
        density_stderr=density_se,
        capped_fraction=capped_fraction,
        n_samples=totals.sum(axis=1).astype(int),
        unreliable=unreliable,
        cos_mode=2.0 * cos_mean,
        cos_mode_stderr=2.0 * cos_mean_se,
    )
    flux = FluxEstimate(
        x_centers=np.asarray(x_centers, dtype=float),
        flux_x=eta * cos_mean,
        flux_stderr=eta * cos_mean_se,
    )
    return profile, flux
