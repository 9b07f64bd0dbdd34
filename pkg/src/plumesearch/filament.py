"""Simplified 2D filament dispersion model.

Gas plumes are tracked as discrete filaments that advect with the wind
of their containing cell plus Gaussian turbulence, growing in radius
with age. The per-cell hit frequency over the recorded window is the
model's predicted observation signature for a candidate source. The
same engine, run statefully at a higher emission rate, serves as the
ground-truth world for closed-loop experiments.

All filament positions are stored relative to the source cell center
and cells are derived from relative offsets, so equal seeds give
bitwise-identical plumes under source translation (up to boundary
truncation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import PlumesearchError
from .grid import Cell, OccupancyGrid
from .wind import WindField


@dataclass(frozen=True)
class SimParams:
    """Filament simulation parameters (times in seconds, lengths in meters)."""

    dt: float = 0.1
    duration: float = 30.0
    warmup: float = 5.0
    emission_rate: float = 10.0
    r0: float = 0.1
    growth_rate: float = 0.02
    turbulence_std: float = 0.1
    seed: int | None = None

    def validate(self) -> list[str]:
        out = []
        if not self.dt > 0:
            out.append("sim dt must be > 0")
        if not self.duration > self.warmup:
            out.append("sim duration must exceed warmup")
        if self.warmup < 0:
            out.append("sim warmup must be >= 0")
        if not self.emission_rate > 0:
            out.append("sim emission_rate must be > 0")
        if not self.r0 > 0:
            out.append("sim r0 must be > 0")
        if self.growth_rate < 0:
            out.append("sim growth_rate must be >= 0")
        if self.turbulence_std < 0:
            out.append("sim turbulence_std must be >= 0")
        if out:
            return out
        if self.n_steps <= self.warmup_steps:
            out.append("sim duration leaves no recorded steps after warmup")
        return out

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup / self.dt))


@dataclass
class PlumePrediction:
    """Predicted hit-frequency signature of one candidate source."""

    source_cell: Cell
    freq: np.ndarray  # (n_free,) values in [0, 1], free cells in linear order


@njit(cache=True, nogil=True)
def _advance_and_record(
    pos, birth, alive, n_born,
    first_step, n_chunk, noise,
    occ, wind_u, wind_v,
    sx, sy, cs, dt, rate, turb, r0, growth,
    warmup_steps, record, counts, stamp,
):
    """Advance the filament set n_chunk steps, birthing and recording.

    Positions are relative to the source cell center; the containing
    cell is source + round(rel / cell_size) per axis so trajectories do
    not depend on the absolute source location. Returns the new born
    count. noise[j, s] is the turbulence draw of filament j at chunk
    step s, drawn whether or not the filament is alive, so dropping one
    filament never shifts another's randomness.
    """
    H, W = occ.shape
    for s in range(n_chunk):
        abs_step = first_step + s + 1
        for j in range(n_born):
            if not alive[j]:
                continue
            relx = pos[j, 0]
            rely = pos[j, 1]
            cx = sx + int(math.floor(relx / cs + 0.5))
            cy = sy + int(math.floor(rely / cs + 0.5))
            vx = wind_u[cy, cx] + turb * noise[j, s, 0]
            vy = wind_v[cy, cx] + turb * noise[j, s, 1]
            nx = relx + vx * dt
            ny = rely + vy * dt
            ncx = sx + int(math.floor(nx / cs + 0.5))
            ncy = sy + int(math.floor(ny / cs + 0.5))
            if ncx < 0 or ncx >= W or ncy < 0 or ncy >= H:
                alive[j] = False
                continue
            if occ[ncy, ncx]:
                # specular reflection off the crossed cell faces; a
                # filament that cannot be resolved stays in place
                dxc = ncx - (sx + int(math.floor(relx / cs + 0.5)))
                dyc = ncy - (sy + int(math.floor(rely / cs + 0.5)))
                if abs(dxc) > 1 or abs(dyc) > 1:
                    continue
                ocx = int(math.floor(relx / cs + 0.5))
                ocy = int(math.floor(rely / cs + 0.5))
                rx = nx
                ry = ny
                blocked_x = False
                blocked_y = False
                if dxc != 0:
                    tx = sx + ocx + dxc
                    if occ[sy + ocy, tx]:
                        blocked_x = True
                if dyc != 0:
                    ty = sy + ocy + dyc
                    if occ[ty, sx + ocx]:
                        blocked_y = True
                if not blocked_x and not blocked_y:
                    blocked_x = dxc != 0
                    blocked_y = dyc != 0
                if blocked_x:
                    face = (ocx + 0.5 * dxc) * cs
                    rx = 2.0 * face - nx
                if blocked_y:
                    face = (ocy + 0.5 * dyc) * cs
                    ry = 2.0 * face - ny
                rcx = sx + int(math.floor(rx / cs + 0.5))
                rcy = sy + int(math.floor(ry / cs + 0.5))
                if 0 <= rcx < W and 0 <= rcy < H and not occ[rcy, rcx]:
                    pos[j, 0] = rx
                    pos[j, 1] = ry
                continue
            pos[j, 0] = nx
            pos[j, 1] = ny

        target = int(math.floor(rate * abs_step * dt))
        while n_born < target:
            pos[n_born, 0] = 0.0
            pos[n_born, 1] = 0.0
            birth[n_born] = abs_step
            alive[n_born] = True
            n_born += 1

        if record and abs_step > warmup_steps:
            for j in range(n_born):
                if not alive[j]:
                    continue
                r = r0 + growth * (abs_step - birth[j]) * dt
                relx = pos[j, 0]
                rely = pos[j, 1]
                lo_x = int(math.floor((relx - r) / cs + 0.5))
                hi_x = int(math.floor((relx + r) / cs + 0.5))
                lo_y = int(math.floor((rely - r) / cs + 0.5))
                hi_y = int(math.floor((rely + r) / cs + 0.5))
                r2 = r * r
                for cyr in range(lo_y, hi_y + 1):
                    ay = sy + cyr
                    if ay < 0 or ay >= H:
                        continue
                    for cxr in range(lo_x, hi_x + 1):
                        ax = sx + cxr
                        if ax < 0 or ax >= W:
                            continue
                        dx = cxr * cs - relx
                        dy = cyr * cs - rely
                        if dx * dx + dy * dy <= r2:
                            if stamp[ay, ax] != abs_step:
                                stamp[ay, ax] = abs_step
                                counts[ay, ax] += 1
    return n_born


def _total_births(rate: float, n_steps: int, dt: float) -> int:
    return int(math.floor(rate * n_steps * dt))


def simulate_plume(
    grid: OccupancyGrid,
    wind: WindField,
    source: Cell,
    params: SimParams,
) -> PlumePrediction:
    """Hit-frequency map a source at ``source`` would produce.

    Pure function of its arguments: identical params (seed included)
    give bitwise-identical output. Running every candidate of an
    estimation round on one shared seed gives common random numbers, so
    frequency differences between candidates reflect source placement
    rather than turbulence draws.
    """
    problems = params.validate()
    if problems:
        raise PlumesearchError("; ".join(problems))
    if params.seed is None:
        raise PlumesearchError("simulate_plume requires params.seed")
    sx, sy = int(source[0]), int(source[1])
    if not grid.is_free(sx, sy):
        raise PlumesearchError(f"source cell {(sx, sy)} is not free")

    n_steps = params.n_steps
    n_total = _total_births(params.emission_rate, n_steps, params.dt)
    rng = np.random.default_rng(params.seed)
    noise = rng.standard_normal((n_total, n_steps, 2))

    pos = np.zeros((n_total, 2))
    birth = np.zeros(n_total, dtype=np.int64)
    alive = np.zeros(n_total, dtype=np.bool_)
    counts = np.zeros((grid.height, grid.width), dtype=np.int64)
    stamp = np.full((grid.height, grid.width), -1, dtype=np.int64)
    field = wind.as_grid_array()

    _advance_and_record(
        pos, birth, alive, 0,
        0, n_steps, noise,
        grid.occupancy, np.ascontiguousarray(field[:, :, 0]),
        np.ascontiguousarray(field[:, :, 1]),
        sx, sy, grid.cell_size, params.dt, params.emission_rate,
        params.turbulence_std, params.r0, params.growth_rate,
        params.warmup_steps, True, counts, stamp,
    )

    n_recorded = n_steps - params.warmup_steps
    freq_grid = counts / float(n_recorded)
    free = ~grid.occupancy
    ys, xs = np.nonzero(free)
    return PlumePrediction(source_cell=(sx, sy), freq=freq_grid[ys, xs])


class FilamentWorld:
    """Stateful ground-truth dispersion simulation.

    Runs the same filament engine continuously; the harness advances it
    in real time and samples noisy point measurements. ``prewarm``
    seconds are simulated at construction so the episode starts inside
    a developed plume.
    """

    _CHUNK_CAP = 100  # steps per noise block, bounds draw memory

    def __init__(
        self,
        grid: OccupancyGrid,
        wind: WindField,
        source_cell: Cell,
        params: SimParams,
        seed: int | np.random.SeedSequence | None = None,
        prewarm: float = 0.0,
    ):
        problems = params.validate()
        if problems:
            raise PlumesearchError("; ".join(problems))
        sx, sy = int(source_cell[0]), int(source_cell[1])
        if not grid.is_free(sx, sy):
            raise PlumesearchError(f"source cell {(sx, sy)} is not free")
        if prewarm < 0:
            raise PlumesearchError("prewarm must be >= 0")
        self.grid = grid
        self.wind = wind
        self.source_cell = (sx, sy)
        self.params = params
        self._rng = np.random.default_rng(seed if seed is not None else params.seed)
        field = wind.as_grid_array()
        self._wu = np.ascontiguousarray(field[:, :, 0])
        self._wv = np.ascontiguousarray(field[:, :, 1])
        cap = max(16, _total_births(params.emission_rate, 1, params.dt) + 16)
        self._pos = np.zeros((cap, 2))
        self._birth = np.zeros(cap, dtype=np.int64)
        self._alive = np.zeros(cap, dtype=np.bool_)
        self._n_born = 0
        self._abs_step = 0
        self._dummy_counts = np.zeros((1, 1), dtype=np.int64)
        self._dummy_stamp = np.full((1, 1), -1, dtype=np.int64)
        self._prewarm_steps = int(round(prewarm / params.dt))
        if self._prewarm_steps:
            self._run(self._prewarm_steps)

    @property
    def steps(self) -> int:
        return self._abs_step

    @property
    def time(self) -> float:
        """Episode seconds elapsed (prewarm excluded)."""
        return (self._abs_step - self._prewarm_steps) * self.params.dt

    @property
    def total_born(self) -> int:
        return self._n_born

    @property
    def alive_count(self) -> int:
        return int(self._alive[: self._n_born].sum())

    def filament_positions(self) -> np.ndarray:
        """World coordinates of all currently alive filaments."""
        rel = self._pos[: self._n_born][self._alive[: self._n_born]]
        return self.grid.cell_center(*self.source_cell) + rel

    def _ensure_capacity(self, n: int) -> None:
        cap = len(self._birth)
        if n <= cap:
            return
        new = max(2 * cap, n)
        pos = np.zeros((new, 2))
        pos[:cap] = self._pos
        birth = np.zeros(new, dtype=np.int64)
        birth[:cap] = self._birth
        alive = np.zeros(new, dtype=np.bool_)
        alive[:cap] = self._alive
        self._pos, self._birth, self._alive = pos, birth, alive

    def _run(self, n_steps: int) -> None:
        p = self.params
        done = 0
        while done < n_steps:
            chunk = min(self._CHUNK_CAP, n_steps - done)
            end_step = self._abs_step + chunk
            n_end = _total_births(p.emission_rate, end_step, p.dt)
            self._ensure_capacity(n_end)
            noise = self._rng.standard_normal((n_end, chunk, 2))
            self._n_born = _advance_and_record(
                self._pos, self._birth, self._alive, self._n_born,
                self._abs_step, chunk, noise,
                self.grid.occupancy, self._wu, self._wv,
                self.source_cell[0], self.source_cell[1],
                self.grid.cell_size, p.dt, p.emission_rate,
                p.turbulence_std, p.r0, p.growth_rate,
                0, False, self._dummy_counts, self._dummy_stamp,
            )
            self._abs_step = end_step
            done += chunk

    def advance(self, seconds: float) -> None:
        """Advance world time; seconds must be a multiple of dt."""
        n = int(round(seconds / self.params.dt))
        if abs(n * self.params.dt - seconds) > 1e-9:
            raise PlumesearchError("advance seconds must be a multiple of dt")
        if n > 0:
            self._run(n)

    def gas_at(self, cell: Cell) -> bool:
        """True gas presence: cell center within radius of any filament."""
        x, y = int(cell[0]), int(cell[1])
        if not self.grid.is_free(x, y):
            raise PlumesearchError(f"cell {(x, y)} is not free")
        n = self._n_born
        if n == 0:
            return False
        alive = self._alive[:n]
        if not alive.any():
            return False
        p = self.params
        rel = self._pos[:n][alive]
        age = (self._abs_step - self._birth[:n][alive]) * p.dt
        radius = p.r0 + p.growth_rate * age
        cx = (x - self.source_cell[0]) * self.grid.cell_size
        cy = (y - self.source_cell[1]) * self.grid.cell_size
        d2 = (rel[:, 0] - cx) ** 2 + (rel[:, 1] - cy) ** 2
        return bool(np.any(d2 <= radius**2))

    def wind_at(self, cell: Cell) -> np.ndarray:
        return self.wind.vector_at(cell)


def sample_ground_truth(
    world: FilamentWorld,
    cell: Cell,
    noise: tuple[float, float],
    rng: np.random.Generator,
    wind_noise_std: float = 0.0,
) -> tuple[int, np.ndarray]:
    """Noisy point measurement of the world: (binary hit, wind vector).

    The true gas indicator is flipped with probability eps_fn when gas
    is present and eps_fp when absent; the true wind gets additive
    Gaussian noise. Draws come from the caller's rng so sensor noise is
    a separate reproducible stream.
    """
    eps_fp, eps_fn = noise
    if not 0.0 <= eps_fp <= 1.0 or not 0.0 <= eps_fn <= 1.0:
        raise PlumesearchError("noise rates must lie in [0, 1]")
    present = world.gas_at(cell)
    flip = rng.random() < (eps_fn if present else eps_fp)
    hit = int(present) ^ int(flip)
    wind = world.wind_at(cell) + wind_noise_std * rng.standard_normal(2)
    return hit, wind
