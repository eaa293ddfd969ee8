"""
Scatterer geometry: lazy Poisson hard-disk fields and exact ray-disk queries

The slab (0, L) x R is covered by square cells of pitch cell_size. Cells
are materialized in blocks of FIELD_BLOCK x FIELD_BLOCK on first query;
each block's disks depend only on (seed, realization, epoch, block), so a
field can be rebuilt anywhere and agrees bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .config import SlabConfig
from .debug import get_logger
from .streams import FIELD_BLOCK, Purpose, stream

logger = get_logger(__name__)

UNIT_TOL = 1e-12
DEPARTURE_TOL = 1e-12
GRAZING_TOL = 1e-12
TIE_TOL = 1e-12
EVENT_TOL = 1e-9

DiskId = Tuple[float, float]
Vec = Tuple[float, float]

FIELD_CSV_COLUMNS = ["cell_x", "cell_y", "center_x", "center_y"]


class ContractViolation(ValueError):
    """Caller broke an operation's precondition"""


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    NONE = "none"


@dataclass(frozen=True)
class ParticleState:
    """Position in the closed slab and unit velocity"""

    x: Vec
    v: Vec

    @classmethod
    def from_angle(cls, x1: float, x2: float, phi: float) -> "ParticleState":
        return cls((float(x1), float(x2)), (math.cos(phi), math.sin(phi)))

    @property
    def phi(self) -> float:
        return math.atan2(self.v[1], self.v[0])

    @property
    def speed(self) -> float:
        return math.hypot(*self.v)

    def reversed(self) -> "ParticleState":
        return ParticleState(self.x, (-self.v[0], -self.v[1]))

    def check(self, L: float) -> None:
        if not (0.0 <= self.x[0] <= L) or not math.isfinite(self.x[1]):
            raise ContractViolation(f"position {self.x} outside the closed slab [0, {L}]")
        if not abs(self.speed - 1.0) <= UNIT_TOL:
            raise ContractViolation(f"velocity {self.v} is not a unit vector (|v| = {self.speed!r})")


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    center: DiskId
    impact_parameter: float
    v_in: Vec
    v_out: Vec
    position: Vec
    normal: Vec

    def __post_init__(self):
        """Check the scattering geometry is self-consistent"""
        for name in ("v_in", "v_out", "normal"):
            norm = math.hypot(*getattr(self, name))
            if abs(norm - 1.0) > EVENT_TOL:
                raise ContractViolation(f"{name} is not a unit vector (|{name}| = {norm!r})")
        n, v = self.normal, self.v_in
        if not -1.0 <= self.impact_parameter <= 1.0:
            raise ContractViolation(f"impact parameter {self.impact_parameter} outside [-1, 1]")
        if abs(self.impact_parameter - (n[0] * v[1] - n[1] * v[0])) > EVENT_TOL:
            raise ContractViolation("impact parameter disagrees with the contact normal")
        if n[0] * v[0] + n[1] * v[1] > EVENT_TOL:
            raise ContractViolation("velocity points out of the disk at contact")
        expected = specular_reflect(v, n)
        if math.hypot(expected[0] - self.v_out[0], expected[1] - self.v_out[1]) > EVENT_TOL:
            raise ContractViolation("v_out is not the specular reflection of v_in")

    @property
    def alpha(self) -> float:
        return math.asin(self.impact_parameter)


@dataclass(frozen=True)
class BoundaryExit:
    side: Side
    time: float
    position: Vec


@dataclass(frozen=True)
class NoEvent:
    horizon: float


Event = Union[CollisionEvent, BoundaryExit, NoEvent]


def specular_reflect(v_in: Iterable[float], n: Iterable[float]) -> Vec:
    """v_in - 2 (n . v_in) n, renormalized to unit speed"""
    v0, v1 = v_in
    n0, n1 = n
    dot = n0 * v0 + n1 * v1
    r0 = v0 - 2.0 * dot * n0
    r1 = v1 - 2.0 * dot * n1
    norm = math.hypot(r0, r1)
    return (r0 / norm, r1 / norm)


@dataclass(frozen=True)
class _Block:
    centers: np.ndarray  # (n, 2)
    cells: np.ndarray  # (n, 2) integer cell coordinates


_EMPTY = _Block(np.empty((0, 2)), np.empty((0, 2), dtype=np.int64))


class ScattererField:
    """
    Quenched Poisson configuration of overlapping disks of radius epsilon

    Args:
        config: physical parameters (intensity, radius, slab width, seed)
        realization_index: independent realization under the same seed
        epoch: refresh counter for environments resampled along a path
        cell_size: hash pitch, default config.cell_factor * epsilon
        condition_point: remove every disk whose center lies within
            epsilon of this point
    """

    def __init__(
        self,
        config: SlabConfig,
        realization_index: int = 0,
        epoch: int = 0,
        cell_size: Optional[float] = None,
        condition_point: Optional[Vec] = None,
    ):
        self.config = config
        self.realization_index = int(realization_index)
        self.epoch = int(epoch)
        self.epsilon = config.epsilon
        self.L = config.L
        self.cell_size = float(cell_size if cell_size is not None else config.cell_size)
        if not self.cell_size >= self.epsilon:
            raise ContractViolation("cell_size must be at least epsilon")
        self.block_size = FIELD_BLOCK * self.cell_size
        self.condition_point = None if condition_point is None else (float(condition_point[0]), float(condition_point[1]))
        self.n_conditioned = 0
        self._static = False
        self._blocks: Dict[Tuple[int, int], _Block] = {}

        if self.condition_point is not None:
            self._materialize_around(self.condition_point, self.epsilon)

    # Construction helpers

    @classmethod
    def from_centers(
        cls,
        config: SlabConfig,
        centers: Union[np.ndarray, List[Vec]],
        cell_size: Optional[float] = None,
    ) -> "ScattererField":
        """Static field holding exactly the given centers; nothing else is ever generated"""
        field = cls(config, cell_size=cell_size)
        field._static = True
        centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        cells = np.floor(centers / field.cell_size).astype(np.int64)
        blocks = np.floor_divide(cells, FIELD_BLOCK)
        for key in {tuple(b) for b in blocks.tolist()}:
            mask = (blocks[:, 0] == key[0]) & (blocks[:, 1] == key[1])
            field._blocks[key] = _Block(centers[mask].copy(), cells[mask].copy())
        return field

    def reindexed(self, cell_size: float) -> "ScattererField":
        """Static copy of every materialized disk, hashed at a different pitch"""
        return ScattererField.from_centers(self.config, self.all_centers(), cell_size=cell_size)

    # Generation

    def _generate_block(self, bx: int, by: int) -> _Block:
        cs = self.cell_size
        col_left = (bx * FIELD_BLOCK + np.arange(FIELD_BLOCK)) * cs
        x_lo = np.maximum(col_left, 0.0)
        widths = np.clip(np.minimum(col_left + cs, self.L) - x_lo, 0.0, None)
        mu_eps = self.config.mu_eps
        if mu_eps == 0 or not widths.any():
            return _EMPTY

        rng = stream(self.config.seed, Purpose.FIELD, self.realization_index, self.epoch, bx, by)
        lam = np.repeat((mu_eps * widths * cs)[:, None], FIELD_BLOCK, axis=1)
        counts = rng.poisson(lam)  # [column, row]
        total = int(counts.sum())
        if total == 0:
            return _EMPTY

        col, row = np.divmod(np.repeat(np.arange(FIELD_BLOCK * FIELD_BLOCK), counts.ravel()), FIELD_BLOCK)
        u = rng.random((total, 2))
        ix = bx * FIELD_BLOCK + col
        iy = by * FIELD_BLOCK + row
        centers = np.column_stack((x_lo[col] + u[:, 0] * widths[col], (iy + u[:, 1]) * cs))
        cells = np.column_stack((ix, iy)).astype(np.int64)

        if self.condition_point is not None:
            px, py = self.condition_point
            keep = np.hypot(centers[:, 0] - px, centers[:, 1] - py) > self.epsilon
            removed = int(total - np.count_nonzero(keep))
            if removed:
                self.n_conditioned += removed
                centers, cells = centers[keep], cells[keep]

        return _Block(centers, cells)

    def _block(self, bx: int, by: int) -> _Block:
        key = (bx, by)
        blk = self._blocks.get(key)
        if blk is None:
            if self._static:
                return _EMPTY
            blk = self._generate_block(bx, by)
            # Regeneration is deterministic, so a racing writer stores identical content
            self._blocks[key] = blk
        return blk

    def _materialize_around(self, point: Vec, radius: float) -> None:
        bs = self.block_size
        for bx in range(math.floor((point[0] - radius) / bs), math.floor((point[0] + radius) / bs) + 1):
            for by in range(math.floor((point[1] - radius) / bs), math.floor((point[1] + radius) / bs) + 1):
                self._block(bx, by)

    def materialize(self, y_min: float, y_max: float) -> None:
        """Generate every block covering the slab between heights y_min and y_max"""
        bs = self.block_size
        for bx in range(math.floor(0.0 / bs), math.floor(self.L / bs) + 1):
            for by in range(math.floor(y_min / bs), math.floor(y_max / bs) + 1):
                self._block(bx, by)

    # Queries

    @property
    def conditioned(self) -> bool:
        return self.n_conditioned > 0

    def centers_in_cell(self, ix: int, iy: int) -> np.ndarray:
        blk = self._block(ix // FIELD_BLOCK, iy // FIELD_BLOCK)
        mask = (blk.cells[:, 0] == ix) & (blk.cells[:, 1] == iy)
        return blk.centers[mask]

    @property
    def generated_cells(self) -> Dict[Tuple[int, int], np.ndarray]:
        """Materialized non-empty cells and their centers"""
        table: Dict[Tuple[int, int], List[np.ndarray]] = {}
        for blk in self._blocks.values():
            for cell, center in zip(blk.cells.tolist(), blk.centers):
                table.setdefault(tuple(cell), []).append(center)
        return {cell: np.array(rows) for cell, rows in table.items()}

    def all_centers(self) -> np.ndarray:
        parts = [blk.centers for _, blk in sorted(self._blocks.items()) if len(blk.centers)]
        return np.concatenate(parts) if parts else np.empty((0, 2))

    def nearest_hit(
        self,
        x: Vec,
        v: Vec,
        t_max: float,
        exclude: Optional[DiskId] = None,
    ) -> Optional[Tuple[float, DiskId]]:
        """
        Earliest contact time and disk along the ray x + t v, t <= t_max

        Walks the block grid along the ray; a disk touched while the ray
        is in block B has its center in B or one of its eight neighbours.
        """
        x0, x1 = x
        v0, v1 = v
        eps = self.epsilon
        eps2 = eps * eps
        bs = self.block_size

        bx, by = math.floor(x0 / bs), math.floor(x1 / bs)
        step_x = 1 if v0 > 0 else -1
        step_y = 1 if v1 > 0 else -1
        t_next_x = (((bx + 1) if v0 > 0 else bx) * bs - x0) / v0 if v0 != 0 else math.inf
        t_next_y = (((by + 1) if v1 > 0 else by) * bs - x1) / v1 if v1 != 0 else math.inf
        dt_x = bs / abs(v0) if v0 != 0 else math.inf
        dt_y = bs / abs(v1) if v1 != 0 else math.inf

        best_t = math.inf
        best_c: Optional[DiskId] = None
        checked = set()

        # A finite disk set bounds every contact time, which keeps the walk finite
        if not math.isfinite(t_max) and (self._static or self.config.mu_eps == 0):
            centers = self.all_centers() if self._static else np.empty((0, 2))
            if not len(centers):
                return None
            reach = float(np.hypot(centers[:, 0] - x0, centers[:, 1] - x1).max()) + eps
            return self.nearest_hit(x, v, reach, exclude)

        while True:
            t_exit = min(t_next_x, t_next_y)
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    key = (bx + dx, by + dy)
                    if key in checked:
                        continue
                    checked.add(key)
                    centers = self._block(*key).centers
                    if not len(centers):
                        continue

                    d0 = centers[:, 0] - x0
                    d1 = centers[:, 1] - x1
                    b = d0 * v0 + d1 * v1
                    c2 = d0 * d0 + d1 * d1 - eps2
                    disc = b * b - c2
                    idx = np.flatnonzero((disc > 0) & (b > 0) & (c2 >= 0.0))
                    if not idx.size:
                        continue
                    # Entry root in the cancellation-free form c2 / (b + sqrt(disc))
                    t = c2[idx] / (b[idx] + np.sqrt(disc[idx]))
                    rho = (v0 * d1[idx] - v1 * d0[idx]) / eps
                    good = (np.abs(rho) < 1.0 - GRAZING_TOL) & (t <= t_max)
                    if exclude is not None:
                        own = (centers[idx, 0] == exclude[0]) & (centers[idx, 1] == exclude[1])
                        good &= ~(own & (t < DEPARTURE_TOL))
                    if not good.any():
                        continue

                    idx, t = idx[good], t[good]
                    t_min = t.min()
                    tied = t <= t_min + TIE_TOL
                    order = np.lexsort((centers[idx[tied], 1], centers[idx[tied], 0]))
                    pick = idx[tied][order[0]]
                    cand_t = float(t[tied][order[0]])
                    cand_c = (float(centers[pick, 0]), float(centers[pick, 1]))
                    if cand_t < best_t - TIE_TOL or (
                        abs(cand_t - best_t) <= TIE_TOL and (best_c is None or cand_c < best_c)
                    ):
                        best_t, best_c = cand_t, cand_c

            if best_t <= t_exit or t_exit >= t_max:
                break
            if t_next_x < t_next_y:
                bx += step_x
                t_next_x += dt_x
            else:
                by += step_y
                t_next_y += dt_y

        if best_c is None or best_t > t_max:
            return None
        return best_t, best_c

    # CSV dump

    def dump_csv(self, path: Union[str, Path]) -> None:
        rows = []
        for _, blk in sorted(self._blocks.items()):
            for cell, center in zip(blk.cells.tolist(), blk.centers.tolist()):
                rows.append((cell[0], cell[1], center[0], center[1]))
        df = pd.DataFrame(rows, columns=FIELD_CSV_COLUMNS)
        df.to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def load_csv(
        cls,
        path: Union[str, Path],
        config: SlabConfig,
        cell_size: Optional[float] = None,
    ) -> "ScattererField":
        df = pd.read_csv(path, float_precision="round_trip")
        missing = set(FIELD_CSV_COLUMNS) - set(df.columns)
        if missing:
            raise ContractViolation(f"field dump missing columns {sorted(missing)}")
        centers = df[["center_x", "center_y"]].to_numpy(dtype=float)
        return cls.from_centers(config, centers, cell_size=cell_size)


def build_field(
    config: SlabConfig,
    realization_index: int,
    epoch: int = 0,
    condition_point: Optional[Vec] = None,
    cell_size: Optional[float] = None,
) -> ScattererField:
    """Lazy field bound to (seed, realization_index, epoch); no cell is generated yet"""
    return ScattererField(
        config,
        realization_index=realization_index,
        epoch=epoch,
        cell_size=cell_size,
        condition_point=condition_point,
    )


def _boundary_time(x0: float, v0: float, L: float) -> Tuple[float, Side]:
    if v0 < 0:
        return x0 / -v0, Side.LEFT
    if v0 > 0:
        return (L - x0) / v0, Side.RIGHT
    return math.inf, Side.NONE


def first_hit(
    state: ParticleState,
    field: ScattererField,
    exclude: Optional[DiskId] = None,
    horizon: float = math.inf,
) -> Event:
    """
    Earliest event along the ray from state within horizon

    Returns:
        CollisionEvent with a disk, BoundaryExit at x1 in {0, L}, or NoEvent
    """
    speed = state.speed
    if not math.isfinite(speed) or abs(speed - 1.0) > UNIT_TOL:
        raise ContractViolation(f"degenerate direction {state.v} (|v| = {speed!r})")
    if horizon < 0:
        raise ContractViolation("horizon must be nonnegative")
    if horizon == 0:
        return NoEvent(0.0)

    (x0, x1), (v0, v1) = state.x, state.v
    t_bound, side = _boundary_time(x0, v0, field.L)
    t_limit = min(t_bound, horizon)

    hit = field.nearest_hit(state.x, state.v, t_limit, exclude)
    if hit is not None and hit[0] < t_bound:
        t, c = hit
        p = (x0 + t * v0, x1 + t * v1)
        n0, n1 = p[0] - c[0], p[1] - c[1]
        norm = math.hypot(n0, n1)
        n = (n0 / norm, n1 / norm)
        rho = min(1.0, max(-1.0, n[0] * v1 - n[1] * v0))
        return CollisionEvent(
            time=t,
            center=c,
            impact_parameter=rho,
            v_in=state.v,
            v_out=specular_reflect(state.v, n),
            position=p,
            normal=n,
        )

    if math.isfinite(t_bound) and t_bound <= horizon:
        pos = (0.0 if side is Side.LEFT else field.L, x1 + t_bound * v1)
        return BoundaryExit(side, t_bound, pos)
    return NoEvent(horizon)
