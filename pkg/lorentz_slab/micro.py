"""
Microscopic hard-disk dynamics in the slab

The backward flow of (x, v) is the forward flow of (x, -v): the particle
retraces, in reverse, the path that brought it to x. Boundary data are read
where that reversed path first leaves the slab.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import MODES, SlabConfig
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
from .geometry import (
    BoundaryExit,
    CollisionEvent,
    DiskId,
    NoEvent,
    ParticleState,
    ScattererField,
    Side,
    Vec,
    build_field,
    first_hit,
)

logger = get_logger(__name__)

# Samples per farm chunk; micro samples are costly, so chunks stay small
MICRO_CHUNK = 32


@dataclass(frozen=True)
class ExitRecord:
    side: Side
    tau_elapsed: float
    boundary_value: Optional[float] = None
    position: Optional[Vec] = None

    def __post_init__(self):
        if self.side is Side.LEFT and self.position is not None and self.position[0] != 0.0:
            raise ValueError(f"left exit recorded at x1={self.position[0]}")
        if (self.side is Side.NONE) != (self.boundary_value is None):
            raise ValueError("boundary_value is set exactly when the path exits")

    @property
    def exited(self) -> bool:
        return self.side is not Side.NONE


def make_exit(config: SlabConfig, side: Side, tau: float, position: Optional[Vec] = None) -> ExitRecord:
    if side is Side.RIGHT and position is not None and position[0] != config.L:
        raise ValueError(f"right exit recorded at x1={position[0]}, expected {config.L}")
    return ExitRecord(side, tau, config.boundary_value(side.value), position)


@dataclass
class MicroTrajectory:
    """
    One piecewise-straight trajectory

    Events and legs are stored in the order the particle traverses them;
    for a backward trajectory that is the reversed-velocity motion.
    """

    initial: ParticleState
    events: List[CollisionEvent]
    exit: ExitRecord
    hits: List[DiskId]
    final: ParticleState
    n_collisions: int
    collision_capped: bool = False
    backward: bool = False

    @property
    def capped(self) -> bool:
        """No boundary exit: horizon reached or collision cap hit"""
        return not self.exit.exited

    def legs(self) -> List[Tuple[Vec, Vec]]:
        """Straight segments from start through every contact point to the end point"""
        points = [self.initial.x] + [ev.position for ev in self.events] + [self.final.x]
        return list(zip(points[:-1], points[1:]))


def flow_forward(
    state: ParticleState,
    horizon: float,
    field: ScattererField,
    max_collisions: Optional[int] = None,
    record: bool = True,
) -> MicroTrajectory:
    """
    Forward flow T^t up to the first boundary exit or the horizon

    Event times in the result are cumulative from the start.
    """
    config = field.config
    state.check(config.L)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    cap = max_collisions if max_collisions is not None else config.max_collisions

    x, v = state.x, state.v
    elapsed = 0.0
    exclude: Optional[DiskId] = None
    events: List[CollisionEvent] = []
    hits: List[DiskId] = []
    n = 0

    while True:
        remaining = horizon - elapsed
        ev = first_hit(ParticleState(x, v), field, exclude, remaining)

        if isinstance(ev, CollisionEvent):
            n += 1
            elapsed += ev.time
            x, v, exclude = ev.position, ev.v_out, ev.center
            if record:
                events.append(dataclasses.replace(ev, time=elapsed))
                hits.append(ev.center)
            if n >= cap:
                logger.warning("Trajectory capped after %d collisions at time %.4g", n, elapsed)
                exit_record = make_exit(config, Side.NONE, elapsed)
                return MicroTrajectory(state, events, exit_record, hits, ParticleState(x, v), n, collision_capped=True)
            continue

        if isinstance(ev, BoundaryExit):
            elapsed += ev.time
            x = ev.position
            exit_record = make_exit(config, ev.side, elapsed, x)
        else:
            assert isinstance(ev, NoEvent)
            x = (x[0] + remaining * v[0], x[1] + remaining * v[1])
            exit_record = make_exit(config, Side.NONE, horizon)
        return MicroTrajectory(state, events, exit_record, hits, ParticleState(x, v), n)


def flow_backward(
    state: ParticleState,
    horizon: float,
    field: ScattererField,
    max_collisions: Optional[int] = None,
    record: bool = True,
) -> MicroTrajectory:
    """T^{-t}(x, v): final holds the phase-space point reached, velocity included"""
    traj = flow_forward(state.reversed(), horizon, field, max_collisions, record)
    traj.initial = state
    traj.final = traj.final.reversed()
    traj.backward = True
    return traj


# Estimators

PointLike = Union[float, Sequence[float]]
VelocityLike = Union[float, Sequence[float]]


def as_state(x: PointLike, v: VelocityLike) -> ParticleState:
    """Accept x1 or (x1, x2), and an angle or a unit vector"""
    if np.ndim(x) == 0:
        point = (float(x), 0.0)
    else:
        point = (float(x[0]), float(x[1]))
    if np.ndim(v) == 0:
        return ParticleState.from_angle(point[0], point[1], float(v))
    return ParticleState(point, (float(v[0]), float(v[1])))


def realization_key(stream_id: int, index: int) -> int:
    return (int(stream_id) << 32) + int(index)


def _evaluate_datum(f0: BoundedDatum, state: ParticleState) -> float:
    return float(f0(np.array([state.x[0]]), np.array([state.x[1]]), np.array([state.phi]))[0])


def estimate_f(
    x: PointLike,
    v: VelocityLike,
    t: float,
    config: SlabConfig,
    n_samples: int,
    f0: Union[float, BoundedDatum] = 0.0,
    workers: Optional[int] = None,
    stream_id: int = 0,
) -> Estimate:
    """
    Time-dependent correlation function f(x, v, t)

    Each sample draws a field conditioned to have no center within epsilon
    of x, flows backward for time t, and returns the boundary datum on exit
    or f0 at the backward end point otherwise.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    f0 = as_datum(f0, "f0")
    state = as_state(x, v)
    state.check(config.L)
    if t == 0:
        return Estimate.exact(_evaluate_datum(f0, state), n_samples, t=0.0)

    def run(start: int, stop: int) -> np.ndarray:
        out = np.zeros((stop - start, 3))
        for row, i in enumerate(range(start, stop)):
            fld = build_field(config, realization_key(stream_id, i), condition_point=state.x)
            traj = flow_backward(state, t, fld, record=False)
            if traj.exit.exited:
                out[row, 0] = traj.exit.boundary_value
            elif traj.collision_capped:
                out[row, 1] = 1.0
            else:
                out[row, 0] = _evaluate_datum(f0, traj.final)
            out[row, 2] = float(fld.conditioned)
        return out

    data = np.concatenate(SampleFarm(workers, MICRO_CHUNK).run(run, n_samples, "estimate_f"))
    return Estimate.from_samples(data[:, 0], data[:, 1] > 0, data[:, 2] > 0, t=float(t))


def _stationary_sample(
    state: ParticleState,
    config: SlabConfig,
    realization: int,
    mode: str,
    t0: float,
) -> Tuple[float, bool, bool]:
    """(boundary value, capped, conditioned) for one backward exit"""
    horizon = config.horizon
    if mode == "fresh":
        fld = build_field(config, realization, condition_point=state.x)
        traj = flow_backward(state, horizon, fld, record=False)
        return (traj.exit.boundary_value or 0.0), traj.capped, fld.conditioned

    # Environment resampled every backward time t0, conditioned at each refresh point
    current = state
    elapsed = 0.0
    collisions = 0
    conditioned = False
    epoch = 0
    while elapsed < horizon:
        fld = build_field(config, realization, epoch=epoch, condition_point=current.x)
        if epoch == 0:
            conditioned = fld.conditioned
        step = min(t0, horizon - elapsed)
        traj = flow_backward(current, step, fld, config.max_collisions - collisions, record=False)
        if traj.exit.exited:
            return traj.exit.boundary_value, False, conditioned
        collisions += traj.n_collisions
        if traj.collision_capped:
            break
        current = traj.final
        elapsed += step
        epoch += 1
    return 0.0, True, conditioned


def estimate_f_stationary(
    x: PointLike,
    v: VelocityLike,
    config: SlabConfig,
    n_samples: int,
    mode: str = "fresh",
    t0: Optional[float] = None,
    workers: Optional[int] = None,
    stream_id: int = 0,
) -> Estimate:
    """
    Stationary correlation function by backward exit resummation

    Args:
        mode: "fresh" keeps one field per sample; "rerandomized" resamples
            the field every backward time t0 (default eta)
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    t0 = config.eta if t0 is None else float(t0)
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    state = as_state(x, v)
    state.check(config.L)

    def run(start: int, stop: int) -> np.ndarray:
        out = np.zeros((stop - start, 3))
        for row, i in enumerate(range(start, stop)):
            out[row] = _stationary_sample(state, config, realization_key(stream_id, i), mode, t0)
        return out

    data = np.concatenate(SampleFarm(workers, MICRO_CHUNK).run(run, n_samples, "estimate_f_stationary"))
    meta = {"mode": mode}
    if mode == "rerandomized":
        meta["t0"] = t0
    return Estimate.from_samples(data[:, 0], data[:, 1] > 0, data[:, 2] > 0, **meta)


def micro_profiles(
    config: SlabConfig,
    x_bins: int,
    angle_count: int,
    n_samples: int,
    mode: str = "fresh",
    t0: Optional[float] = None,
    workers: Optional[int] = None,
) -> Tuple[DensityProfile, FluxEstimate]:
    """Density and flux per bin from stationary estimates on a (bin, angle) grid"""
    check_angle_count(angle_count)
    centers = bin_centers(config.L, x_bins)
    phis = profile_angle_nodes(angle_count)

    grid = []
    for b, xc in enumerate(centers):
        row = [
            estimate_f_stationary(
                xc, phi, config, n_samples, mode=mode, t0=t0, workers=workers,
                stream_id=1 + b * angle_count + a,
            )
            for a, phi in enumerate(phis)
        ]
        grid.append(row)
        logger.debug("micro profile bin %d/%d done", b + 1, len(centers))
    return assemble_profiles(centers, phis, grid, config.eta)
