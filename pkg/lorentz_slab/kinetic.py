"""
Linear Boltzmann velocity-jump process in the slab

Between jumps a path moves in a straight line at unit speed. Jumps come at
rate 2 mu eta (the slab clock) and rotate the velocity by pi + 2 arcsin(rho)
with rho uniform on [-1, 1], which is hard-disk scattering at a uniformly
distributed impact parameter. Paths run backward in time: they move along
-v and read boundary data where they first leave the slab.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .angular import green_kubo_d
from .config import SlabConfig
from .debug import get_logger
from .estimators import (
    BoundedDatum,
    DensityProfile,
    Estimate,
    FluxEstimate,
    SampleFarm,
    as_datum,
    assemble_profiles,
    bin_centers,
    check_angle_count,
    profile_angle_nodes,
)
from .geometry import ParticleState, Side
from .heat import GaussianBump, heat_evolve_free
from .micro import ExitRecord, PointLike, VelocityLike, as_state, make_exit
from .streams import PATH_BLOCK, PROFILE_BLOCK, Purpose, stream

logger = get_logger(__name__)

REPRESENTATIONS = ("stopped", "fictitious")

# Exit side codes used by the vectorized engine
_NONE, _LEFT, _RIGHT = 0, 1, 2


class EstimatorTag(IntEnum):
    """Separates the random streams of different estimators"""

    H_OUT = 1
    H_OUT_FICTITIOUS = 2
    STATIONARY = 3
    SURVIVAL = 4
    SEMIGROUP = 5
    FULL = 6
    DIFFUSIVE = 7
    SEMIGROUP_INNER = 8
    SEMIGROUP_OUTER = 9
    PROFILE = 10


@dataclass(frozen=True)
class BoundaryData:
    """Reservoir densities; the Maxwellian 1/2pi is absorbed into them"""

    rho1: float
    rho2: float

    def __post_init__(self):
        if not (self.rho1 > 0 and self.rho2 > 0):
            raise ValueError("boundary densities must be positive")

    @classmethod
    def from_config(cls, config: SlabConfig) -> "BoundaryData":
        return cls(config.rho1, config.rho2)

    def evaluate(self, x1: float, v1: float, L: float) -> float:
        """Inflow value: left wall with v1 > 0, right wall with v1 < 0"""
        if x1 == 0.0 and v1 > 0:
            return self.rho1
        if x1 == L and v1 < 0:
            return self.rho2
        raise ValueError(f"({x1}, v1={v1}) is not on the inflow boundary")


@dataclass
class JumpPath:
    """
    One backward path of the jump process

    jump_times are elapsed backward times (increasing); velocities[0] is the
    initial velocity and velocities[i] the velocity after jump i; positions
    hold the start point followed by every jump point.
    """

    initial: ParticleState
    jump_times: np.ndarray
    impact_parameters: np.ndarray
    velocities: np.ndarray
    positions: np.ndarray
    exit: ExitRecord
    end_position: Tuple[float, float]
    horizon: float

    def __post_init__(self):
        speeds = np.hypot(self.velocities[:, 0], self.velocities[:, 1])
        if not np.all(np.abs(speeds - 1.0) <= 1e-12):
            raise ValueError("jump path velocities must be unit vectors")
        if np.any(np.diff(self.jump_times) < 0):
            raise ValueError("jump times must be nondecreasing")

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.size)

    @property
    def motion(self) -> np.ndarray:
        """Direction of travel on each leg (the reversed velocity)"""
        return -self.velocities

    def legs(self) -> List[Tuple[Tuple[float, float], Tuple[float, float]]]:
        points = [tuple(p) for p in self.positions] + [tuple(self.end_position)]
        return list(zip(points[:-1], points[1:]))


def _rotate(v: np.ndarray, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    out = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])
    return out / math.hypot(*out)


def sample_jump_path(
    state: ParticleState,
    horizon: float,
    config: SlabConfig,
    rng: np.random.Generator,
) -> JumpPath:
    """Draw one backward path up to the first boundary crossing or the horizon"""
    state.check(config.L)
    rate = config.jump_rate
    L = config.L
    x = np.array(state.x, dtype=float)
    v = np.array(state.v, dtype=float)
    times, rhos, velocities, positions = [], [], [v.copy()], [x.copy()]
    elapsed = 0.0
    exit_record = make_exit(config, Side.NONE, 0.0)

    while horizon > 0:
        wait = rng.exponential(1.0 / rate) if rate > 0 else math.inf
        u = -v
        if u[0] < 0:
            t_bound, side = x[0] / -u[0], Side.LEFT
        elif u[0] > 0:
            t_bound, side = (L - x[0]) / u[0], Side.RIGHT
        else:
            t_bound, side = math.inf, Side.NONE
        remaining = horizon - elapsed

        if t_bound <= min(wait, remaining):
            elapsed += t_bound
            x = np.array([0.0 if side is Side.LEFT else L, x[1] + t_bound * u[1]])
            exit_record = make_exit(config, side, elapsed, (float(x[0]), float(x[1])))
            break
        if remaining <= wait:
            x = x + remaining * u
            exit_record = make_exit(config, Side.NONE, horizon)
            break

        elapsed += wait
        x = x + wait * u
        rho = rng.uniform(-1.0, 1.0)
        v = _rotate(v, math.pi + 2.0 * math.asin(rho))
        times.append(elapsed)
        rhos.append(rho)
        velocities.append(v.copy())
        positions.append(x.copy())

    return JumpPath(
        initial=state,
        jump_times=np.array(times),
        impact_parameters=np.array(rhos),
        velocities=np.array(velocities),
        positions=np.array(positions),
        exit=exit_record,
        end_position=(float(x[0]), float(x[1])),
        horizon=float(horizon),
    )


# Vectorized engine

@dataclass
class PathBatch:
    """End states of a batch of backward paths"""

    side: np.ndarray  # exit codes
    exit_time: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    phi: np.ndarray  # phase-space velocity angle at the end
    n_jumps: np.ndarray

    @property
    def exited(self) -> np.ndarray:
        return self.side != _NONE

    def boundary_values(self, config: SlabConfig) -> np.ndarray:
        data = BoundaryData.from_config(config)
        return np.select([self.side == _LEFT, self.side == _RIGHT], [data.rho1, data.rho2], 0.0)


def run_paths(
    x1: np.ndarray,
    x2: np.ndarray,
    phi: np.ndarray,
    horizon: float,
    rate: float,
    L: float,
    rng: np.random.Generator,
    speed: float = 1.0,
    stop_at_boundary: bool = True,
) -> PathBatch:
    """
    Advance many backward paths until exit or horizon

    phi is the phase-space velocity angle; motion is along -v.
    """
    n = x1.size
    x1 = np.array(x1, dtype=float)
    x2 = np.array(x2, dtype=float)
    theta = np.array(phi, dtype=float) + math.pi  # direction of motion
    elapsed = np.zeros(n)
    side = np.zeros(n, dtype=np.int8)
    exit_time = np.full(n, np.nan)
    n_jumps = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)

    if horizon <= 0:
        return PathBatch(side, exit_time, x1, x2, theta - math.pi, n_jumps)

    while alive.size:
        k = alive.size
        wait = rng.exponential(size=k) / rate if rate > 0 else np.full(k, np.inf)
        rho = rng.uniform(-1.0, 1.0, size=k)
        ux = np.cos(theta[alive])
        uy = np.sin(theta[alive])
        remaining = horizon - elapsed[alive]

        if stop_at_boundary:
            with np.errstate(divide="ignore", invalid="ignore"):
                t_bound = np.where(ux < 0, x1[alive] / -ux, np.where(ux > 0, (L - x1[alive]) / ux, np.inf)) / speed
        else:
            t_bound = np.full(k, np.inf)

        crosses = t_bound <= np.minimum(wait, remaining)
        runs_out = ~crosses & (remaining <= wait)
        jumps = ~crosses & ~runs_out
        step = np.where(crosses, t_bound, np.where(runs_out, remaining, wait))

        x1[alive] += speed * step * ux
        x2[alive] += speed * step * uy
        elapsed[alive] += step

        if crosses.any():
            idx = alive[crosses]
            left = ux[crosses] < 0
            x1[idx] = np.where(left, 0.0, L)
            side[idx] = np.where(left, _LEFT, _RIGHT)
            exit_time[idx] = elapsed[idx]
        if runs_out.any():
            elapsed[alive[runs_out]] = horizon

        j = alive[jumps]
        theta[j] += math.pi + 2.0 * np.arcsin(rho[jumps])
        n_jumps[j] += 1
        alive = j

    return PathBatch(side, exit_time, x1, x2, np.mod(theta, 2 * math.pi) - math.pi, n_jumps)


def run_paths_fictitious(
    x1: np.ndarray,
    x2: np.ndarray,
    phi: np.ndarray,
    horizon: float,
    rate: float,
    L: float,
    rng: np.random.Generator,
) -> PathBatch:
    """
    Fictitious-jump representation on [0, horizon]

    The whole jump sequence is drawn first (Poisson count, uniform ordered
    times) ignoring the walls; jumps keep coming after the path leaves the
    slab, but the exit record is frozen at the first crossing.
    """
    n = x1.size
    x1 = np.array(x1, dtype=float)
    x2 = np.array(x2, dtype=float)
    theta = np.array(phi, dtype=float) + math.pi
    side = np.zeros(n, dtype=np.int8)
    exit_time = np.full(n, np.nan)
    exit_x2 = np.zeros(n)

    counts = rng.poisson(rate * horizon, size=n) if rate > 0 else np.zeros(n, dtype=np.int64)
    width = int(counts.max()) if n else 0
    times = np.sort(rng.random((n, width)) * horizon, axis=1)
    times[np.arange(width)[None, :] >= counts[:, None]] = horizon
    rhos = rng.uniform(-1.0, 1.0, size=(n, width))

    clock = np.zeros(n)
    for col in range(width + 1):
        nxt = times[:, col] if col < width else np.full(n, horizon)
        seg = nxt - clock
        ux, uy = np.cos(theta), np.sin(theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_bound = np.where(ux < 0, x1 / -ux, np.where(ux > 0, (L - x1) / ux, np.inf))
        inside = side == _NONE
        crossing = inside & (x1 >= 0) & (x1 <= L) & (t_bound <= seg)
        if crossing.any():
            left = ux[crossing] < 0
            side[crossing] = np.where(left, _LEFT, _RIGHT)
            exit_time[crossing] = clock[crossing] + t_bound[crossing]
            exit_x2[crossing] = x2[crossing] + t_bound[crossing] * uy[crossing]
        x1 += seg * ux
        x2 += seg * uy
        clock = nxt
        if col < width:
            active = col < counts
            theta[active] += math.pi + 2.0 * np.arcsin(rhos[active, col])

    exited = side != _NONE
    x1[exited] = np.where(side[exited] == _LEFT, 0.0, L)
    x2[exited] = exit_x2[exited]
    return PathBatch(side, exit_time, x1, x2, np.mod(theta, 2 * math.pi) - math.pi, counts)


# Estimator plumbing

def _farm_paths(
    seed: int,
    n_samples: int,
    tag: EstimatorTag,
    keys: Sequence[int],
    simulate: Callable[[np.random.Generator, int], np.ndarray],
    workers: Optional[int],
    block: int = PATH_BLOCK,
) -> np.ndarray:
    """Run simulate(rng, n) per block of path indices, in index order; keys extend the stream key"""
    keys = tuple(int(k) for k in keys)

    def run(start: int, stop: int) -> np.ndarray:
        rng = stream(seed, Purpose.PATH, int(tag), *keys, start // block)
        return simulate(rng, stop - start)

    farm = SampleFarm(workers, chunk_size=block)
    return np.concatenate(farm.run(run, n_samples, tag.name.lower()))


def _start_arrays(state: ParticleState, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return np.full(n, state.x[0]), np.full(n, state.x[1]), np.full(n, state.phi)


def _check_samples(n_samples: int) -> None:
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")


def estimate_h_out(
    x: PointLike,
    v: VelocityLike,
    t: float,
    config: SlabConfig,
    n_samples: int,
    representation: str = "stopped",
    workers: Optional[int] = None,
    stream_id: int = 0,
) -> Estimate:
    """Boundary part of the kinetic solution: E[f_B(exit) 1{exit before t}]"""
    if representation not in REPRESENTATIONS:
        raise ValueError(f"representation must be one of {REPRESENTATIONS}")
    if t < 0:
        raise ValueError("t must be nonnegative")
    _check_samples(n_samples)
    state = as_state(x, v)
    state.check(config.L)
    if t == 0:
        return Estimate.exact(0.0, n_samples, representation=representation)

    engine = run_paths if representation == "stopped" else run_paths_fictitious
    tag = EstimatorTag.H_OUT if representation == "stopped" else EstimatorTag.H_OUT_FICTITIOUS

    def simulate(rng: np.random.Generator, n: int) -> np.ndarray:
        batch = engine(*_start_arrays(state, n), t, config.jump_rate, config.L, rng)
        return batch.boundary_values(config)

    values = _farm_paths(config.seed, n_samples, tag, (stream_id,), simulate, workers)
    return Estimate.from_samples(values, representation=representation, t=float(t))


def _outside_slab(state: ParticleState, config: SlabConfig) -> bool:
    return not 0.0 < state.x[0] < config.L


def apply_S0(
    ell: Union[float, BoundedDatum],
    t: float,
    config: SlabConfig,
    eval_points: Sequence[Tuple[PointLike, VelocityLike]],
    n_samples: int,
    workers: Optional[int] = None,
    stream_id: int = 0,
) -> List[Estimate]:
    """
    Killed semigroup: E[ell(end point) 1{no exit before t}] at each point

    ell is defined on the whole plane; points outside the open slab give 0.
    """
    ell = as_datum(ell, "ell")
    if t < 0:
        raise ValueError("t must be nonnegative")
    _check_samples(n_samples)

    results = []
    for p, (x, v) in enumerate(eval_points):
        state = as_state(x, v)
        if _outside_slab(state, config):
            results.append(Estimate.exact(0.0, n_samples))
            continue
        if t == 0:
            value = ell(np.array([state.x[0]]), np.array([state.x[1]]), np.array([state.phi]))[0]
            results.append(Estimate.exact(float(value), n_samples))
            continue

        def simulate(rng: np.random.Generator, n: int, state=state) -> np.ndarray:
            batch = run_paths(*_start_arrays(state, n), t, config.jump_rate, config.L, rng)
            out = np.zeros(n)
            keep = ~batch.exited
            if keep.any():
                out[keep] = ell(batch.x1[keep], batch.x2[keep], batch.phi[keep])
            return out

        values = _farm_paths(config.seed, n_samples, EstimatorTag.SEMIGROUP, (stream_id, p), simulate, workers)
        results.append(Estimate.from_samples(values, t=float(t)))
    return results


def apply_S0_composed(
    ell: Union[float, BoundedDatum],
    t_outer: float,
    t_inner: float,
    config: SlabConfig,
    eval_points: Sequence[Tuple[PointLike, VelocityLike]],
    n_outer: int,
    n_inner: int,
    stream_id: int = 0,
) -> List[Estimate]:
    """S0(t_outer) applied to a Monte Carlo evaluation of S0(t_inner) ell"""
    ell = as_datum(ell, "ell")
    _check_samples(n_outer)
    _check_samples(n_inner)

    results = []
    for p, (x, v) in enumerate(eval_points):
        state = as_state(x, v)
        if _outside_slab(state, config):
            results.append(Estimate.exact(0.0, n_outer))
            continue
        rng_outer = stream(config.seed, Purpose.PATH, int(EstimatorTag.SEMIGROUP_OUTER), stream_id, p)
        rng_inner = stream(config.seed, Purpose.PATH, int(EstimatorTag.SEMIGROUP_INNER), stream_id, p)
        outer = run_paths(*_start_arrays(state, n_outer), t_outer, config.jump_rate, config.L, rng_outer)

        values = np.zeros(n_outer)
        alive = np.flatnonzero(~outer.exited)
        if alive.size:
            inner = run_paths(
                np.repeat(outer.x1[alive], n_inner),
                np.repeat(outer.x2[alive], n_inner),
                np.repeat(outer.phi[alive], n_inner),
                t_inner, config.jump_rate, config.L, rng_inner,
            )
            observed = np.zeros(inner.x1.size)
            keep = ~inner.exited
            if keep.any():
                observed[keep] = ell(inner.x1[keep], inner.x2[keep], inner.phi[keep])
            values[alive] = observed.reshape(alive.size, n_inner).mean(axis=1)
        results.append(Estimate.from_samples(values, t=float(t_outer + t_inner)))
    return results


def estimate_h_stationary(
    x: PointLike,
    v: VelocityLike,
    config: SlabConfig,
    n_samples: int,
    workers: Optional[int] = None,
    stream_id: int = 0,
) -> Estimate:
    """Mean boundary datum at the first exit; paths still inside at the horizon are capped"""
    _check_samples(n_samples)
    state = as_state(x, v)
    state.check(config.L)

    def simulate(rng: np.random.Generator, n: int) -> np.ndarray:
        batch = run_paths(*_start_arrays(state, n), config.horizon, config.jump_rate, config.L, rng)
        return np.column_stack((batch.boundary_values(config), ~batch.exited))

    data = _farm_paths(config.seed, n_samples, EstimatorTag.STATIONARY, (stream_id,), simulate, workers)
    return Estimate.from_samples(data[:, 0], data[:, 1] > 0)


def survival_probability(
    x: PointLike,
    t: float,
    config: SlabConfig,
    n_samples: int,
    workers: Optional[int] = None,
    stream_id: int = 0,
) -> Estimate:
    """P(path from x with uniform velocity stays in the slab up to t)"""
    if t < 0:
        raise ValueError("t must be nonnegative")
    _check_samples(n_samples)
    state = as_state(x, 0.0)
    if _outside_slab(state, config):
        raise ValueError(f"x1={state.x[0]} is not inside (0, {config.L})")
    if t == 0:
        return Estimate.exact(1.0, n_samples, t=0.0)

    def simulate(rng: np.random.Generator, n: int) -> np.ndarray:
        phi = rng.uniform(-math.pi, math.pi, size=n)
        batch = run_paths(np.full(n, state.x[0]), np.full(n, state.x[1]), phi, t, config.jump_rate, config.L, rng)
        return (~batch.exited).astype(float)

    values = _farm_paths(config.seed, n_samples, EstimatorTag.SURVIVAL, (stream_id,), simulate, workers)
    return Estimate.from_samples(values, t=float(t))


def richardson_survival(
    x: float,
    t_diffusive: float,
    config: SlabConfig,
    n_samples: int,
    workers: Optional[int] = None,
    stream_id: int = 0,
) -> Tuple[Estimate, Estimate, float, float]:
    """
    Kinetic survival at eta and 2 eta for the same diffusive time, and the
    1/eta-extrapolated value 2 S(2 eta) - S(eta) with its standard error

    Returns:
        (estimate at eta, estimate at 2 eta, extrapolated value, its stderr)
    """
    coarse = survival_probability(x, config.eta * t_diffusive, config, n_samples, workers, stream_id)
    fine_config = config.replace(eta=2.0 * config.eta)
    fine = survival_probability(x, fine_config.eta * t_diffusive, fine_config, n_samples, workers, stream_id)
    value = 2.0 * fine.value - coarse.value
    return coarse, fine, value, math.hypot(2.0 * fine.stderr, coarse.stderr)


@dataclass(frozen=True)
class KineticSolution:
    """h = h_out + h_in, estimated on one set of paths"""

    h_out: Estimate
    h_in: Estimate
    total: Estimate


def estimate_h(
    x: PointLike,
    v: VelocityLike,
    t: float,
    config: SlabConfig,
    n_samples: int,
    f0: Union[float, BoundedDatum] = 0.0,
    workers: Optional[int] = None,
    stream_id: int = 0,
) -> KineticSolution:
    """Time-dependent kinetic solution with its boundary and initial-datum parts"""
    f0 = as_datum(f0, "f0")
    if t < 0:
        raise ValueError("t must be nonnegative")
    _check_samples(n_samples)
    state = as_state(x, v)
    state.check(config.L)
    if t == 0:
        value = float(f0(np.array([state.x[0]]), np.array([state.x[1]]), np.array([state.phi]))[0])
        return KineticSolution(Estimate.exact(0.0, n_samples), Estimate.exact(value, n_samples), Estimate.exact(value, n_samples))

    def simulate(rng: np.random.Generator, n: int) -> np.ndarray:
        batch = run_paths(*_start_arrays(state, n), t, config.jump_rate, config.L, rng)
        out = np.zeros((n, 2))
        out[:, 0] = batch.boundary_values(config)
        keep = ~batch.exited
        if keep.any():
            out[keep, 1] = f0(batch.x1[keep], batch.x2[keep], batch.phi[keep])
        return out

    data = _farm_paths(config.seed, n_samples, EstimatorTag.FULL, (stream_id,), simulate, workers)
    return KineticSolution(
        h_out=Estimate.from_samples(data[:, 0], t=float(t)),
        h_in=Estimate.from_samples(data[:, 1], t=float(t)),
        total=Estimate.from_samples(data[:, 0] + data[:, 1], t=float(t)),
    )


def kinetic_profiles(
    config: SlabConfig,
    x_bins: int,
    angle_count: int,
    n_samples: int,
    workers: Optional[int] = None,
) -> Tuple[DensityProfile, FluxEstimate]:
    """
    Kinetic twin of micro_profiles

    All angle nodes of a bin run in one batch of paths, PROFILE_BLOCK samples
    per node and stream; each (bin, angle) point is a stationary exit estimate.
    """
    check_angle_count(angle_count)
    _check_samples(n_samples)
    centers = bin_centers(config.L, x_bins)
    phis = profile_angle_nodes(angle_count)

    grid = []
    for b, xc in enumerate(centers):

        def simulate(rng: np.random.Generator, n: int, xc=xc) -> np.ndarray:
            batch = run_paths(
                np.full(n * angle_count, xc), np.zeros(n * angle_count), np.tile(phis, n),
                config.horizon, config.jump_rate, config.L, rng,
            )
            values = batch.boundary_values(config).reshape(n, angle_count)
            capped = (~batch.exited).reshape(n, angle_count)
            return np.hstack((values, capped))

        data = _farm_paths(config.seed, n_samples, EstimatorTag.PROFILE, (1 + b,), simulate, workers, PROFILE_BLOCK)
        grid.append([
            Estimate.from_samples(data[:, a], data[:, angle_count + a] > 0)
            for a in range(angle_count)
        ])
        logger.debug("kinetic profile bin %d/%d done", b + 1, len(centers))
    return assemble_profiles(centers, phis, grid, config.eta)


@dataclass
class DiffusiveLimitResult:
    eta: float
    t: float
    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    reference: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.values - self.reference)

    @property
    def sup_error(self) -> float:
        return float(self.errors.max()) if self.errors.size else 0.0

    @property
    def stderr_at_sup(self) -> float:
        return float(self.stderr[np.argmax(self.errors)]) if self.errors.size else 0.0

    def to_dict(self) -> Dict[str, float]:
        return {"eta": self.eta, "t": self.t, "sup_error": self.sup_error, "stderr_at_sup": self.stderr_at_sup}


def diffusive_limit_error(
    rho0: GaussianBump,
    t: float,
    eta: float,
    n_samples: int,
    grid: np.ndarray,
    mu: float = 1.0,
    seed: int = 0,
    phi: float = 0.0,
    workers: Optional[int] = None,
) -> DiffusiveLimitResult:
    """
    Whole-plane rescaled process (speed eta, rate 2 mu eta^2) against the heat equation

    The kinetic value E[rho0(X_t)] is estimated at each grid point for the
    fixed velocity angle phi and compared with the Gaussian heat solution.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if eta < 1:
        raise ValueError("eta must be at least 1")
    _check_samples(n_samples)
    grid = np.asarray(grid, dtype=float)
    points = np.column_stack((grid, np.zeros_like(grid))) if grid.ndim == 1 else grid.reshape(-1, 2)
    D = green_kubo_d(mu).D
    reference = heat_evolve_free(rho0, t, D, points if rho0.dim == 2 else points[:, 0])
    rate = 2.0 * mu * eta * eta

    values = np.zeros(len(points))
    stderr = np.zeros(len(points))
    for p, (px, py) in enumerate(points):
        if t == 0:
            values[p] = rho0(np.array([[px, py]]) if rho0.dim == 2 else np.array([px]))[0]
            continue

        def simulate(rng: np.random.Generator, n: int, px=px, py=py) -> np.ndarray:
            batch = run_paths(
                np.full(n, px), np.full(n, py), np.full(n, phi), t, rate, math.inf, rng,
                speed=eta, stop_at_boundary=False,
            )
            ends = np.column_stack((batch.x1, batch.x2)) if rho0.dim == 2 else batch.x1
            return rho0(ends)

        est = Estimate.from_samples(
            _farm_paths(seed, n_samples, EstimatorTag.DIFFUSIVE, (p,), simulate, workers)
        )
        values[p], stderr[p] = est.value, est.stderr

    result = DiffusiveLimitResult(float(eta), float(t), points, values, stderr, reference)
    logger.info("Diffusive limit eta=%g t=%g: sup error %.4g (stderr %.2g)", eta, t, result.sup_error, result.stderr_at_sup)
    return result
