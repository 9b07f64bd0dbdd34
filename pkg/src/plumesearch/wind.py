"""Dense 2D wind field estimation from sparse local measurements.

Extrapolates point wind observations over all free cells by minimizing
a quadratic objective: a data-fit term at observed cells, a smoothness
term over neighboring free cells, and a boundary term penalizing the
velocity component normal to obstacle faces. The u and v components
decouple (obstacle faces are axis-aligned), so each solves as an
independent sparse SPD system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import IllConditionedError, PlumesearchError
from .grid import Cell, OccupancyGrid


@dataclass
class WindSolverParams:
    data_weight: float = 1.0
    smoothness_weight: float = 0.1
    boundary_weight: float = 10.0
    tol: float = 1e-8

    def validate(self) -> list[str]:
        out = []
        if self.data_weight <= 0:
            out.append("wind data_weight must be > 0")
        if self.smoothness_weight <= 0:
            out.append("wind smoothness_weight must be > 0")
        if self.boundary_weight < 0:
            out.append("wind boundary_weight must be >= 0")
        return out


@dataclass
class WindField:
    """Per-free-cell wind vectors (m/s). Occupied cells carry no value."""

    grid: OccupancyGrid
    vectors: np.ndarray  # (n_free, 2)
    timestamp: int = 0
    _free_index: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._free_index is None:
            self._free_index = self.grid.free_index()

    def vector_at(self, cell: Cell) -> np.ndarray:
        i = self._free_index[cell[1], cell[0]]
        if i < 0:
            raise PlumesearchError(f"cell {cell} is occupied; no wind value")
        return self.vectors[i]

    def as_grid_array(self) -> np.ndarray:
        """(H, W, 2) array, zeros at occupied cells."""
        out = np.zeros((self.grid.height, self.grid.width, 2))
        cells = self.grid.free_cells()
        out[cells[:, 1], cells[:, 0]] = self.vectors
        return out

    @classmethod
    def uniform(cls, grid: OccupancyGrid, vector, timestamp: int = 0) -> "WindField":
        v = np.broadcast_to(np.asarray(vector, dtype=float), (grid.n_free, 2)).copy()
        return cls(grid=grid, vectors=v, timestamp=timestamp)


def _free_components(grid: OccupancyGrid, free_idx: np.ndarray) -> np.ndarray:
    """Connected-component label per free cell (4-connectivity)."""
    n = grid.n_free
    labels = np.full(n, -1, dtype=np.int64)
    cells = grid.free_cells()
    comp = 0
    for start in range(n):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = comp
        while stack:
            i = stack.pop()
            x, y = cells[i]
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                if grid.is_free(x + dx, y + dy):
                    j = free_idx[y + dy, x + dx]
                    if labels[j] < 0:
                        labels[j] = comp
                        stack.append(j)
        comp += 1
    return labels


def estimate_wind(
    grid: OccupancyGrid,
    observations: list[tuple[Cell, np.ndarray]],
    params: WindSolverParams | None = None,
    timestamp: int = 0,
) -> WindField:
    """Least-squares wind field from point observations.

    Raises IllConditionedError when any connected component of free
    space contains no observation (its subsystem would be singular) or
    when the iterative solve fails to converge.
    """
    params = params or WindSolverParams()
    problems = params.validate()
    if problems:
        raise PlumesearchError("; ".join(problems))
    if not observations:
        raise PlumesearchError("wind estimation needs at least one observation")

    free_idx = grid.free_index()
    n = grid.n_free
    cells = grid.free_cells()

    obs_weight = np.zeros(n)
    obs_target = np.zeros((n, 2))
    for cell, vec in observations:
        x, y = int(cell[0]), int(cell[1])
        i = free_idx[y, x]
        if i < 0:
            raise PlumesearchError(f"wind observation at occupied cell {(x, y)}")
        v = np.asarray(vec, dtype=float)
        if not np.all(np.isfinite(v)):
            raise PlumesearchError(f"non-finite wind observation at {(x, y)}")
        obs_weight[i] += params.data_weight
        obs_target[i] += params.data_weight * v

    labels = _free_components(grid, free_idx)
    observed = obs_weight > 0
    missing = sorted(set(labels.tolist()) - set(labels[observed].tolist()))
    if missing:
        raise IllConditionedError(
            "singular system: free-space component(s) "
            f"{missing} contain no wind observation"
        )

    # graph Laplacian over 4-connected free cells
    rows, cols = [], []
    for i in range(n):
        x, y = cells[i]
        for dx, dy in ((1, 0), (0, 1)):
            if grid.is_free(x + dx, y + dy):
                j = free_idx[y + dy, x + dx]
                rows.append(i)
                cols.append(j)
    e = len(rows)
    data = np.ones(e)
    adj = sp.coo_matrix((data, (rows, cols)), shape=(n, n))
    adj = adj + adj.T
    lap = sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj

    # boundary penalties: one per free-cell face shared with an occupied cell
    bound_u = np.zeros(n)
    bound_v = np.zeros(n)
    for i in range(n):
        x, y = cells[i]
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, ny = x + dx, y + dy
            if grid.in_bounds(nx, ny) and grid.occupancy[ny, nx]:
                if dx != 0:
                    bound_u[i] += params.boundary_weight
                else:
                    bound_v[i] += params.boundary_weight

    base = sp.diags(obs_weight) + params.smoothness_weight * lap
    maxiter = 10 * n
    result = np.zeros((n, 2))
    for comp_axis, bound in ((0, bound_u), (1, bound_v)):
        A = (base + sp.diags(bound)).tocsr()
        b = obs_target[:, comp_axis]
        x, info = cg(A, b, rtol=params.tol, atol=0.0, maxiter=maxiter)
        if info != 0:
            raise IllConditionedError(
                f"wind solve did not converge (component {comp_axis}, cg info={info})"
            )
        result[:, comp_axis] = x

    return WindField(grid=grid, vectors=result, timestamp=timestamp,
                     _free_index=free_idx)


class WindObservationBuffer:
    """Latest wind observation per cell, accumulated over a run."""

    def __init__(self):
        self._latest: dict[Cell, tuple[int, np.ndarray]] = {}

    def add(self, cell: Cell, vector, t: int) -> None:
        cell = (int(cell[0]), int(cell[1]))
        prev = self._latest.get(cell)
        if prev is None or t >= prev[0]:
            self._latest[cell] = (t, np.asarray(vector, dtype=float))

    def observations(self) -> list[tuple[Cell, np.ndarray]]:
        return [(c, v) for c, (_, v) in sorted(self._latest.items())]

    def __len__(self) -> int:
        return len(self._latest)
