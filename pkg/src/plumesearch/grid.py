"""Occupancy grid, metric conversions, and shortest-path machinery.

Cells are addressed as (x, y) with x in [0, width) and y in [0, height);
linear index = y * width + x. The map is 8-connected with no corner
cutting: a diagonal step is legal only if both adjacent cardinal cells
are free. Cardinal steps cost one cell size, diagonal steps cost
cell_size * sqrt(2).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MapParseError, PlumesearchError

SQRT2 = math.sqrt(2.0)

Cell = tuple[int, int]

# (dx, dy) step order used everywhere; cardinals first, then diagonals,
# each in lowest-linear-index-first order for a centered neighborhood.
_STEPS = (
    (0, -1), (-1, 0), (1, 0), (0, 1),
    (-1, -1), (1, -1), (-1, 1), (1, 1),
)


@dataclass(frozen=True)
class OccupancyGrid:
    """Rectangular lattice of free/occupied cells with metric cell size."""

    width: int
    height: int
    cell_size: float
    occupancy: np.ndarray  # (H, W) bool, True = occupied
    origin: tuple[float, float] = (0.0, 0.0)  # world coords of cell (0,0) center

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise PlumesearchError("grid dimensions must be positive")
        if not self.cell_size > 0:
            raise PlumesearchError("cell_size must be positive")
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != (self.height, self.width):
            raise PlumesearchError(
                f"occupancy shape {occ.shape} does not match "
                f"height x width ({self.height}, {self.width})"
            )
        object.__setattr__(self, "occupancy", occ)
        if occ.all():
            raise PlumesearchError("map has no free cells")

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and not self.occupancy[y, x]

    def linear_index(self, x: int, y: int) -> int:
        return y * self.width + x

    def cell_center(self, x: int, y: int) -> np.ndarray:
        """World coordinates (meters) of the cell center."""
        return np.array(
            [self.origin[0] + x * self.cell_size, self.origin[1] + y * self.cell_size]
        )

    def world_to_cell(self, p) -> Cell:
        """Cell containing a world point (no bounds check)."""
        x = math.floor((p[0] - self.origin[0]) / self.cell_size + 0.5)
        y = math.floor((p[1] - self.origin[1]) / self.cell_size + 0.5)
        return (x, y)

    @property
    def n_free(self) -> int:
        return int((~self.occupancy).sum())

    def free_cells(self) -> np.ndarray:
        """(n_free, 2) int array of (x, y) pairs, ascending linear index."""
        ys, xs = np.nonzero(~self.occupancy)
        return np.column_stack([xs, ys])

    def free_index(self) -> np.ndarray:
        """(H, W) int array mapping cells to flat free indices, -1 if occupied."""
        idx = np.full((self.height, self.width), -1, dtype=np.int64)
        ys, xs = np.nonzero(~self.occupancy)
        idx[ys, xs] = np.arange(len(xs))
        return idx

    def legal_steps(self, x: int, y: int):
        """Yield (nx, ny, nc, nd) for each legal one-cell move from (x, y).

        nc/nd are the cardinal/diagonal step counts (one of them is 1).
        Diagonal moves that would cut a corner past an obstacle are
        excluded.
        """
        for dx, dy in _STEPS:
            nx, ny = x + dx, y + dy
            if not self.is_free(nx, ny):
                continue
            if dx != 0 and dy != 0:
                if not (self.is_free(x + dx, y) and self.is_free(x, y + dy)):
                    continue
                yield nx, ny, 0, 1
            else:
                yield nx, ny, 1, 0

    def step_distance(self, n_cardinal: int, n_diagonal: int) -> float:
        """Canonical metric length of a path with the given step counts.

        Computed from the counts in one expression so equal-length paths
        produce bitwise-identical floats.
        """
        return self.cell_size * (n_cardinal + SQRT2 * n_diagonal)


def parse_occupancy(text: str) -> OccupancyGrid:
    """Parse the portable occupancy map format.

    First non-blank line: ``cell_size <meters>``. Every following
    non-blank line is one grid row, '.' = free, '#' = occupied. Rows
    must all have equal length.
    """
    cell_size = None
    rows: list[list[bool]] = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if cell_size is None:
            parts = line.split()
            if len(parts) != 2 or parts[0] != "cell_size":
                raise MapParseError(
                    f"line {lineno}: expected header 'cell_size <meters>', got {line!r}"
                )
            try:
                cell_size = float(parts[1])
            except ValueError:
                raise MapParseError(f"line {lineno}: cell_size is not a number") from None
            if not cell_size > 0:
                raise MapParseError(f"line {lineno}: cell_size must be positive")
            continue
        if width is None:
            width = len(line)
        elif len(line) != width:
            raise MapParseError(
                f"line {lineno}: row has length {len(line)}, expected {width}"
            )
        row = []
        for col, ch in enumerate(line):
            if ch == ".":
                row.append(False)
            elif ch == "#":
                row.append(True)
            else:
                raise MapParseError(
                    f"line {lineno}: unknown cell character {ch!r} at column {col + 1}"
                )
        rows.append(row)
    if cell_size is None:
        raise MapParseError("line 1: missing 'cell_size' header")
    if not rows:
        raise MapParseError("map has no rows")
    occ = np.array(rows, dtype=bool)
    return OccupancyGrid(
        width=occ.shape[1], height=occ.shape[0], cell_size=cell_size, occupancy=occ
    )


def load_occupancy(path: str | Path) -> OccupancyGrid:
    """Read and parse an occupancy map file."""
    return parse_occupancy(Path(path).read_text())


def serialize_occupancy(grid: OccupancyGrid) -> str:
    """Inverse of parse_occupancy (origin is not part of the format)."""
    lines = [f"cell_size {grid.cell_size!r}"]
    for y in range(grid.height):
        lines.append("".join("#" if grid.occupancy[y, x] else "." for x in range(grid.width)))
    return "\n".join(lines) + "\n"


@dataclass
class GraphPartition:
    """Shortest-path tree from one root cell, grouped by first step.

    Every reachable free cell is assigned to the robot-adjacent neighbor
    that begins its shortest traversable path (lowest neighbor linear
    index on ties). ``path_length`` holds the metric shortest-path
    distance, +inf where unreachable or occupied.
    """

    robot_cell: Cell
    path_length: np.ndarray          # (H, W) float64, meters
    group: np.ndarray                # (H, W) int64 linear index of the neighbor, -1 at root/unreachable
    reachable: np.ndarray            # (H, W) bool
    neighbor_dirs: dict[int, np.ndarray] = field(default_factory=dict)  # linear index -> unit vector

    def delta(self, cell: Cell) -> float:
        return float(self.path_length[cell[1], cell[0]])

    def direction(self, cell: Cell) -> np.ndarray | None:
        """Unit vector from the root toward the first-step neighbor of ``cell``."""
        g = int(self.group[cell[1], cell[0]])
        if g < 0:
            return None
        return self.neighbor_dirs[g]


def build_partition(grid: OccupancyGrid, robot_cell: Cell) -> GraphPartition:
    """Dijkstra from the robot cell, labeling every reachable free cell.

    The label carried along each path is (distance, first-neighbor
    linear index); points compare lexicographically, so ties in distance
    resolve to the lowest neighbor index deterministically. Distances
    use exact cardinal/diagonal step counts, so two equal-length paths
    yield bitwise-identical floats.
    """
    rx, ry = robot_cell
    if not grid.is_free(rx, ry):
        raise PlumesearchError(f"robot cell {robot_cell} is not free")

    H, W = grid.height, grid.width
    dist = np.full((H, W), np.inf)
    group = np.full((H, W), -1, dtype=np.int64)
    counts = np.zeros((H, W, 2), dtype=np.int64)  # (nc, nd) of the best path

    dist[ry, rx] = 0.0
    # heap entries: (distance, group index, x, y, nc, nd)
    heap = []
    neighbor_dirs: dict[int, np.ndarray] = {}
    root_center = grid.cell_center(rx, ry)
    for nx, ny, nc, nd in grid.legal_steps(rx, ry):
        g = grid.linear_index(nx, ny)
        d = grid.step_distance(nc, nd)
        v = grid.cell_center(nx, ny) - root_center
        neighbor_dirs[g] = v / np.linalg.norm(v)
        if (d, g) < (dist[ny, nx], group[ny, nx]):
            dist[ny, nx] = d
            group[ny, nx] = g
            counts[ny, nx] = (nc, nd)
            heapq.heappush(heap, (d, g, nx, ny, nc, nd))

    while heap:
        d, g, x, y, nc, nd = heapq.heappop(heap)
        if (d, g) > (dist[y, x], group[y, x]):
            continue
        for nx, ny, snc, snd in grid.legal_steps(x, y):
            nnc, nnd = nc + snc, nd + snd
            ndist = grid.step_distance(nnc, nnd)
            if (ndist, g) < (dist[ny, nx], group[ny, nx]):
                dist[ny, nx] = ndist
                group[ny, nx] = g
                counts[ny, nx] = (nnc, nnd)
                heapq.heappush(heap, (ndist, g, nx, ny, nnc, nnd))

    reachable = np.isfinite(dist) & ~grid.occupancy
    return GraphPartition(
        robot_cell=robot_cell,
        path_length=dist,
        group=group,
        reachable=reachable,
        neighbor_dirs=neighbor_dirs,
    )


def shortest_path(
    grid: OccupancyGrid, start: Cell, goal: Cell
) -> tuple[list[Cell], float] | None:
    """Shortest traversable path between two free cells.

    Returns (cells, length_m) with cells from start to goal inclusive,
    or None when the goal is unreachable. Lengths match what
    build_partition computes for the same pair.
    """
    for name, (x, y) in (("start", start), ("goal", goal)):
        if not grid.is_free(x, y):
            raise PlumesearchError(f"{name} cell {(x, y)} is not free")
    if start == goal:
        return [start], 0.0

    H, W = grid.height, grid.width
    dist = np.full((H, W), np.inf)
    counts = np.zeros((H, W, 2), dtype=np.int64)
    parent: dict[Cell, Cell] = {}
    sx, sy = start
    gx, gy = goal
    dist[sy, sx] = 0.0
    heap = [(0.0, grid.linear_index(sx, sy), sx, sy, 0, 0)]
    while heap:
        d, _, x, y, nc, nd = heapq.heappop(heap)
        if d > dist[y, x]:
            continue
        if (x, y) == goal:
            break
        for nx, ny, snc, snd in grid.legal_steps(x, y):
            nnc, nnd = nc + snc, nd + snd
            ndist = grid.step_distance(nnc, nnd)
            if ndist < dist[ny, nx]:
                dist[ny, nx] = ndist
                counts[ny, nx] = (nnc, nnd)
                parent[(nx, ny)] = (x, y)
                heapq.heappush(heap, (ndist, grid.linear_index(nx, ny), nx, ny, nnc, nnd))

    if not np.isfinite(dist[gy, gx]):
        return None
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    path.reverse()
    return path, float(dist[gy, gx])
