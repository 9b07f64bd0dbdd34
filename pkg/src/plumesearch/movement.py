"""Next-measurement selection and idealized cell-to-cell motion.

A cell is worth measuring where the candidate sources disagree most
about what would be observed there and the current belief is still
unconfident: psi_i = (1 - alpha_i) * Var_k[f_ki] under the source
posterior. The robot drives toward the best cell one step per
iteration, measuring at every cell it enters.
"""

from __future__ import annotations

import numpy as np

from .errors import PlumesearchError
from .filament import PlumePrediction
from .grid import Cell, GraphPartition, OccupancyGrid, build_partition, shortest_path


def info_value(
    alpha: np.ndarray,
    posterior: np.ndarray,
    predictions: list[PlumePrediction],
) -> np.ndarray:
    """Information value psi per free cell.

    posterior is the normalized candidate distribution; predictions
    align with it, each carrying the candidate's per-free-cell
    frequency signature.
    """
    if len(predictions) != len(posterior):
        raise PlumesearchError("posterior and predictions are misaligned")
    if not len(predictions):
        raise PlumesearchError("need at least one candidate")
    p = np.asarray(posterior, dtype=float)
    freqs = np.stack([pred.freq for pred in predictions])  # (K, n_free)
    mu = p @ freqs
    var = p @ (freqs - mu) ** 2
    return (1.0 - np.asarray(alpha, dtype=float)) * var


def select_goal(
    psi: np.ndarray,
    alpha: np.ndarray,
    grid: OccupancyGrid,
    robot_cell: Cell,
    partition: GraphPartition | None = None,
) -> Cell:
    """Reachable cell maximizing psi.

    Ties break by shortest path length from the robot, then lowest
    linear cell index. When psi is flat zero over everything reachable
    (nothing informative yet), falls back to the nearest cell with
    minimum confidence so the robot keeps exploring.
    """
    if partition is None:
        partition = build_partition(grid, robot_cell)
    elif partition.robot_cell != tuple(robot_cell):
        raise PlumesearchError("partition must be rooted at the robot cell")
    cells = grid.free_cells()
    xs, ys = cells[:, 0], cells[:, 1]
    reach = partition.reachable[ys, xs]
    if not reach.any():
        raise PlumesearchError("no reachable free cell")
    delta = partition.path_length[ys, xs]
    lin = ys * grid.width + xs

    psi = np.asarray(psi, dtype=float)
    if psi[reach].max() > 0.0:
        score = psi
    else:
        a = np.asarray(alpha, dtype=float)
        score = np.where(a == a[reach].min(), 1.0, 0.0)
    masked = np.where(reach, score, -np.inf)
    order = np.lexsort((lin, delta, -masked))
    i = order[0]
    return (int(xs[i]), int(ys[i]))


def advance(robot_cell: Cell, goal: Cell, grid: OccupancyGrid) -> Cell:
    """Successor of robot_cell on the shortest path to goal."""
    if tuple(robot_cell) == tuple(goal):
        return tuple(robot_cell)
    found = shortest_path(grid, tuple(robot_cell), tuple(goal))
    if found is None:
        raise PlumesearchError(f"goal {tuple(goal)} is unreachable")
    path, _ = found
    return path[1]
