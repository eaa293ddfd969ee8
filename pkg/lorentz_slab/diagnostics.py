"""
Pathological events, their epsilon scaling, and field comparisons

Recollisions and interferences are the memory effects that separate the
hard-disk dynamics from the Markov jump process. They are counted on exact
microscopic trajectories and, for interference (which exact trajectories
can never show), on the jump-process surrogate with obstacles placed at the
scattering centers each jump implies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from .config import SlabConfig
from .debug import get_logger
from .estimators import SampleFarm
from .geometry import ContractViolation, ParticleState, ScattererField, build_field
from .kinetic import JumpPath, sample_jump_path
from .micro import MICRO_CHUNK, MicroTrajectory, flow_backward, realization_key
from .streams import Purpose, stream

logger = get_logger(__name__)

# Relative slack on the distance-epsilon circle
TOUCH_TOL = 1e-9
CI_Z = 1.96
MIN_FIT_POINTS = 3


class FitError(ValueError):
    """Too few usable points for a scaling fit"""


@dataclass
class PathologyCounters:
    """
    Trajectory counts per pathology

    n_recollision etc. count trajectories with at least one event;
    multiplicities keep the per-trajectory event counts in input order.
    """

    n_trajectories: int = 0
    n_recollision: int = 0
    n_interference: int = 0
    n_boundary_strip: int = 0
    multiplicities: List[Tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        counts = (self.n_trajectories, self.n_recollision, self.n_interference, self.n_boundary_strip)
        if min(counts) < 0:
            raise ValueError("pathology counts must be nonnegative")
        if max(counts[1:]) > self.n_trajectories:
            raise ValueError("event counts cannot exceed the number of trajectories")

    @classmethod
    def single(cls, recollisions: int, interferences: int, strip: int) -> "PathologyCounters":
        return cls(
            n_trajectories=1,
            n_recollision=int(recollisions > 0),
            n_interference=int(interferences > 0),
            n_boundary_strip=int(strip > 0),
            multiplicities=[(recollisions, interferences, strip)],
        )

    def merge(self, other: "PathologyCounters") -> "PathologyCounters":
        return PathologyCounters(
            self.n_trajectories + other.n_trajectories,
            self.n_recollision + other.n_recollision,
            self.n_interference + other.n_interference,
            self.n_boundary_strip + other.n_boundary_strip,
            self.multiplicities + other.multiplicities,
        )

    @classmethod
    def combine(cls, parts: Iterable["PathologyCounters"]) -> "PathologyCounters":
        total = cls()
        for part in parts:
            total = total.merge(part)
        return total

    def frequency(self, count: int) -> Tuple[float, float]:
        """Bernoulli frequency and its standard error"""
        n = self.n_trajectories
        if n == 0:
            return 0.0, 0.0
        p = count / n
        return p, math.sqrt(p * (1.0 - p) / n)

    def frequencies(self) -> Dict[str, Tuple[float, float]]:
        return {
            "rec": self.frequency(self.n_recollision),
            "int": self.frequency(self.n_interference),
            "strip": self.frequency(self.n_boundary_strip),
        }


def segment_distances(centers: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Exact distance from every center (rows) to every segment (columns)"""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    starts = np.asarray(starts, dtype=float).reshape(-1, 2)
    ends = np.asarray(ends, dtype=float).reshape(-1, 2)
    seg = ends - starts
    length2 = np.einsum("ij,ij->i", seg, seg)
    rel = centers[:, None, :] - starts[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(length2 > 0, np.einsum("ijk,jk->ij", rel, seg) / length2, 0.0)
    s = np.clip(s, 0.0, 1.0)
    nearest = starts[None, :, :] + s[..., None] * seg[None, :, :]
    return np.hypot(centers[:, None, 0] - nearest[..., 0], centers[:, None, 1] - nearest[..., 1])


def _memory_events(
    centers: np.ndarray,
    points: np.ndarray,
    epsilon: float,
) -> Tuple[int, int]:
    """
    Recollisions and interferences along points[0] -> points[1] -> ...

    centers[i] is the obstacle met at points[i + 1]. Leg k runs from
    points[k] to points[k + 1]; obstacle i is left on leg i + 1. A touch is
    counted on the leg that arrives at it, not on the leg leaving it.
    """
    n = len(centers)
    if n == 0:
        return 0, 0
    starts = points[:-1]
    dist = segment_distances(centers, starts, points[1:])
    legs = dist.shape[1]
    obstacle = np.arange(n)[:, None]
    leg = np.arange(legs)[None, :]

    reach = epsilon * (1.0 + TOUCH_TOL)
    touches = dist <= reach
    starts_on = segment_distances(centers, starts, starts) <= reach
    recollisions = int(np.count_nonzero(touches & ~starts_on & (leg > obstacle + 1)))

    inside = dist < epsilon * (1.0 - TOUCH_TOL)
    interferences = int(np.count_nonzero(inside & (obstacle > leg)))
    return recollisions, interferences


def classify_pathologies(trajectory: MicroTrajectory, field: ScattererField) -> PathologyCounters:
    """
    Flag recollisions, interferences and boundary-strip contacts on one trajectory

    The trajectory must carry its recorded events (flow with record=True).
    """
    if len(trajectory.events) != trajectory.n_collisions:
        raise ContractViolation("trajectory was flowed without recording its events")
    eps, L = field.epsilon, field.L
    if trajectory.n_collisions == 0:
        return PathologyCounters.single(0, 0, 0)

    centers = np.array(trajectory.hits, dtype=float)
    contacts = np.array([ev.position for ev in trajectory.events], dtype=float)
    points = np.vstack([trajectory.initial.x, contacts, trajectory.final.x])
    rec, inter = _memory_events(centers, points, eps)
    strip = int(np.count_nonzero((contacts[:, 0] < eps) | (contacts[:, 0] > L - eps)))
    return PathologyCounters.single(rec, inter, strip)


def surrogate_centers(path: JumpPath, epsilon: float) -> np.ndarray:
    """Obstacle centers implied by each jump: contact point minus epsilon times the normal"""
    if path.n_jumps == 0:
        return np.empty((0, 2))
    d = path.motion[:-1]
    d_perp = np.column_stack((-d[:, 1], d[:, 0]))
    alpha = np.arcsin(path.impact_parameters)
    normal = -np.cos(alpha)[:, None] * d - np.sin(alpha)[:, None] * d_perp
    return path.positions[1:] - epsilon * normal


def surrogate_pathologies(path: JumpPath, epsilon: float, L: float) -> PathologyCounters:
    """Memory events of the jump-process path against its implied obstacles"""
    if path.n_jumps == 0:
        return PathologyCounters.single(0, 0, 0)
    centers = surrogate_centers(path, epsilon)
    points = np.vstack([path.positions, path.end_position])
    rec, inter = _memory_events(centers, points, epsilon)
    strip = int(np.count_nonzero(((centers[:, 0] >= -epsilon) & (centers[:, 0] <= 0.0))
                                 | ((centers[:, 0] >= L) & (centers[:, 0] <= L + epsilon))))
    return PathologyCounters.single(rec, inter, strip)


@dataclass
class PathologyMeasurement:
    epsilon: float
    eta: float
    t: float
    micro: PathologyCounters
    surrogate: PathologyCounters

    @property
    def n(self) -> int:
        return self.micro.n_trajectories

    def memory_frequency(self) -> Tuple[float, float]:
        """Micro recollisions plus surrogate interferences"""
        rec, rec_se = self.micro.frequency(self.micro.n_recollision)
        inter, inter_se = self.surrogate.frequency(self.surrogate.n_interference)
        return rec + inter, math.hypot(rec_se, inter_se)


def measure_pathologies(
    config: SlabConfig,
    t: float,
    n_samples: int,
    workers: Optional[int] = None,
) -> PathologyMeasurement:
    """
    Pathology frequencies over trajectories started uniformly in the slab

    Each sample draws (x1, phi) from its own start stream, runs the
    backward micro dynamics for time t in a fresh field conditioned at the
    start, and a jump path from the same start.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")

    def run(start: int, stop: int) -> List[Tuple[PathologyCounters, PathologyCounters]]:
        out = []
        for i in range(start, stop):
            rng = stream(config.seed, Purpose.START, i)
            state = ParticleState.from_angle(rng.uniform(0.0, config.L), 0.0, rng.uniform(-math.pi, math.pi))
            fld = build_field(config, realization_key(0, i), condition_point=state.x)
            traj = flow_backward(state, t, fld)
            path = sample_jump_path(state, t, config, stream(config.seed, Purpose.PATH, 0, i))
            out.append((classify_pathologies(traj, fld), surrogate_pathologies(path, config.epsilon, config.L)))
        return out

    chunks = SampleFarm(workers, MICRO_CHUNK).run(run, n_samples, "pathologies")
    pairs = [pair for chunk in chunks for pair in chunk]
    measurement = PathologyMeasurement(
        epsilon=config.epsilon,
        eta=config.eta,
        t=float(t),
        micro=PathologyCounters.combine(p[0] for p in pairs),
        surrogate=PathologyCounters.combine(p[1] for p in pairs),
    )
    logger.info(
        "Pathologies eps=%g: rec %d, surrogate int %d, strip %d of %d",
        config.epsilon, measurement.micro.n_recollision, measurement.surrogate.n_interference,
        measurement.micro.n_boundary_strip, measurement.n,
    )
    return measurement


@dataclass(frozen=True)
class ScalingFit:
    """p ~ constant * epsilon^exponent"""

    exponent: float
    constant: float
    residual: float
    ci: float
    n_points: int
    dropped: int = 0
    half_power_constant: float = math.nan

    def predict(self, epsilon: float) -> float:
        return self.constant * epsilon**self.exponent

    def to_dict(self) -> Dict[str, float]:
        return {
            "exponent": self.exponent,
            "exponent_ci": self.ci,
            "constant": self.constant,
            "residual": self.residual,
            "n_points": self.n_points,
            "dropped": self.dropped,
            "half_power_constant": self.half_power_constant,
        }


def scaling_fit(points: Sequence[Tuple[float, float, float]]) -> ScalingFit:
    """
    Weighted least squares of log p against log epsilon

    Weights are (p / stderr)^2; with any zero stderr the fit is unweighted.
    The covariance is scaled by the reduced chi-square.
    """
    usable = []
    dropped = 0
    for eps, p, se in points:
        if eps <= 0:
            raise FitError(f"epsilon must be positive, got {eps}")
        if p <= 0:
            logger.warning("Dropping point epsilon=%g with frequency %g (log undefined)", eps, p)
            dropped += 1
            continue
        usable.append((eps, p, se))
    if len(usable) < MIN_FIT_POINTS:
        raise FitError(f"need at least {MIN_FIT_POINTS} positive frequencies, got {len(usable)}")

    eps, p, se = (np.array(col, dtype=float) for col in zip(*usable))
    x, y = np.log(eps), np.log(p)
    w = (p / se) ** 2 if np.all(se > 0) else np.ones_like(p)
    sw = np.sqrt(w)
    design = np.column_stack((x, np.ones_like(x)))
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)

    resid = y - design @ coef
    dof = len(x) - 2
    chi2 = float(np.sum(w * resid**2))
    reduced = chi2 / dof if dof > 0 else 0.0
    cov = np.linalg.inv(design.T @ (design * w[:, None])) * reduced

    return ScalingFit(
        exponent=float(coef[0]),
        constant=float(math.exp(coef[1])),
        residual=math.sqrt(reduced),
        ci=CI_Z * math.sqrt(max(cov[0, 0], 0.0)),
        n_points=len(x),
        dropped=dropped,
        half_power_constant=float(np.max(p / np.sqrt(eps))),
    )


@dataclass(frozen=True)
class FieldComparison:
    sup_diff: float
    l2_diff: float
    z_scores: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_scores))) if self.z_scores.size else 0.0

    @property
    def fraction_over_3(self) -> float:
        return float(np.mean(np.abs(self.z_scores) > 3.0)) if self.z_scores.size else 0.0


def compare_fields(
    values_a: Sequence[float],
    values_b: Sequence[float],
    stderr_a: Sequence[float],
    stderr_b: Sequence[float],
    grid: Sequence,
    grid_b: Optional[Sequence] = None,
) -> FieldComparison:
    """
    Sup and L2 differences plus per-point z-scores of a against b

    A one-dimensional grid gets trapezoid quadrature; any other grid (e.g.
    (x, v) points) gets the root-mean-square difference.
    """
    a, b = np.asarray(values_a, dtype=float), np.asarray(values_b, dtype=float)
    sa, sb = np.asarray(stderr_a, dtype=float), np.asarray(stderr_b, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if not (a.shape == b.shape == sa.shape == sb.shape) or len(grid) != len(a):
        raise ContractViolation("values, stderrs and grid must have matching lengths")
    if grid_b is not None:
        grid_b = np.asarray(grid_b, dtype=float)
        if grid_b.shape != grid.shape or not np.allclose(grid, grid_b, rtol=0.0, atol=1e-12):
            raise ContractViolation("fields were computed on different grids")

    diff = a - b
    se = np.hypot(sa, sb)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff == 0, 0.0, np.sign(diff) * np.inf))

    if diff.size == 0:
        return FieldComparison(0.0, 0.0, z)
    sup = float(np.max(np.abs(diff)))
    if grid.ndim == 1 and grid.size > 1:
        l2 = math.sqrt(float(trapezoid(diff**2, grid)))
    else:
        l2 = float(np.sqrt(np.mean(diff**2)))
    return FieldComparison(sup, l2, z)
