"""Source-location posterior and coarse-to-fine region refinement.

Candidate sources are scored by how well their simulated hit-frequency
signature matches the measured hit map, weighted by per-cell
confidence. To avoid simulating every free cell, free space is tiled
into rectangular regions whose representatives are simulated first;
the most probable regions are recursively subdivided until the budget
runs out or the mass concentrates on single cells.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import PlumesearchError
from .filament import PlumePrediction, SimParams, simulate_plume
from .grid import Cell, OccupancyGrid
from .hitmap import HitMap
from .wind import WindField


@dataclass
class Region:
    """Rectangular block of free cells with one simulated representative."""

    x0: int
    y0: int
    width: int
    height: int
    representative: Cell
    prob: float = 0.0
    leaf: bool = True

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def is_unit(self) -> bool:
        return self.width == 1 and self.height == 1

    def cells(self):
        for y in range(self.y0, self.y0 + self.height):
            for x in range(self.x0, self.x0 + self.width):
                yield (x, y)


@dataclass
class RoundStats:
    simulations: int
    leaves: int
    generations: int
    elapsed_s: float


@dataclass
class SourcePosterior:
    """Posterior over source cells at mixed region resolution.

    cell_probs holds the per-free-cell expansion (region mass spread
    uniformly over the region's cells); variance_m2 is the trace of its
    2D spatial covariance. leaf_predictions, when present, aligns with
    regions and carries each representative's simulated signature.
    """

    regions: list[Region]
    cell_probs: np.ndarray  # (n_free,)
    variance_m2: float
    stats: RoundStats | None = None
    leaf_predictions: list[PlumePrediction] | None = None

    def argmax_cell(self, grid: OccupancyGrid) -> Cell:
        cells = grid.free_cells()
        i = int(np.argmax(self.cell_probs))
        return (int(cells[i, 0]), int(cells[i, 1]))


def cell_likelihood(f_z, alpha, f_s):
    """Unnormalized evidence a source with signature f_s gives to a cell
    measured at frequency f_z with confidence alpha. Scalar or array."""
    return alpha * (1.0 - np.abs(f_z - f_s)) + (1.0 - alpha)


def posterior_over_candidates(
    hit_map: HitMap, predictions: list[PlumePrediction]
) -> np.ndarray:
    """Normalized posterior over explicit candidates (log-space product)."""
    if not predictions:
        raise PlumesearchError("need at least one candidate")
    f_z = hit_map.hit_frequency_map()
    alpha = hit_map.alpha
    logs = np.array([
        _log_likelihood(f_z, alpha, pred.freq) for pred in predictions
    ])
    m = logs.max()
    if not np.isfinite(m):
        raise PlumesearchError("all candidate likelihoods vanished")
    w = np.exp(logs - m)
    return w / w.sum()


def _log_likelihood(f_z: np.ndarray, alpha: np.ndarray, f_s: np.ndarray) -> float:
    # alpha == 0 cells contribute ln(1) = 0; skip them
    active = alpha > 0.0
    if not active.any():
        return 0.0
    like = cell_likelihood(f_z[active], alpha[active], f_s[active])
    return float(np.log(like).sum())


def build_regions(grid: OccupancyGrid, max_region_size: int) -> list[Region]:
    """Tile the free space with rectangular fully-free regions.

    Quadtree subdivision splits any block that is mixed or larger than
    max_region_size per axis; occupied unit cells are discarded. A
    greedy fusion pass then merges neighboring leaves whenever the
    union stays rectangular, fully free, and within the size bound.
    """
    if max_region_size < 1:
        raise PlumesearchError("max_region_size must be >= 1")
    occ = grid.occupancy
    leaves: list[tuple[int, int, int, int]] = []

    def recurse(x0, y0, w, h):
        block = occ[y0 : y0 + h, x0 : x0 + w]
        if block.all():
            return
        if not block.any() and w <= max_region_size and h <= max_region_size:
            leaves.append((x0, y0, w, h))
            return
        if w == 1 and h == 1:
            leaves.append((x0, y0, w, h))  # free unit cell
            return
        wl = (w + 1) // 2 if w > 1 else 1
        hl = (h + 1) // 2 if h > 1 else 1
        recurse(x0, y0, wl, hl)
        if w > 1:
            recurse(x0 + wl, y0, w - wl, hl)
        if h > 1:
            recurse(x0, y0 + hl, wl, h - hl)
        if w > 1 and h > 1:
            recurse(x0 + wl, y0 + hl, w - wl, h - hl)

    recurse(0, 0, grid.width, grid.height)
    leaves.sort(key=lambda r: (r[1], r[0]))

    # greedy pairwise fusion to a fixpoint
    merged = True
    while merged:
        merged = False
        out: list[tuple[int, int, int, int]] = []
        used = [False] * len(leaves)
        for i, a in enumerate(leaves):
            if used[i]:
                continue
            ax, ay, aw, ah = a
            fused = None
            for j in range(i + 1, len(leaves)):
                if used[j]:
                    continue
                bx, by, bw, bh = leaves[j]
                if ay == by and ah == bh and bx == ax + aw and aw + bw <= max_region_size:
                    fused = (ax, ay, aw + bw, ah)
                elif ax == bx and aw == bw and by == ay + ah and ah + bh <= max_region_size:
                    fused = (ax, ay, aw, ah + bh)
                if fused:
                    used[i] = used[j] = True
                    out.append(fused)
                    merged = True
                    break
            if not fused:
                out.append(a)
        leaves = sorted(out, key=lambda r: (r[1], r[0]))

    return [
        Region(x, y, w, h, representative=_representative(grid, x, y, w, h))
        for (x, y, w, h) in leaves
    ]


def _representative(grid: OccupancyGrid, x0: int, y0: int, w: int, h: int) -> Cell:
    """Free cell nearest the block centroid (ties: lowest linear index)."""
    cx = x0 + (w - 1) / 2.0
    cy = y0 + (h - 1) / 2.0
    best = None
    for y in range(y0, y0 + h):
        for x in range(x0, x0 + w):
            if grid.occupancy[y, x]:
                continue
            d = (x - cx) ** 2 + (y - cy) ** 2
            key = (d, grid.linear_index(x, y))
            if best is None or key < best[0]:
                best = (key, (x, y))
    if best is None:
        raise PlumesearchError("region contains no free cell")
    return best[1]


def initial_posterior(grid: OccupancyGrid, max_region_size: int) -> SourcePosterior:
    """Coarse uniform posterior (uniform over free cells, area-weighted)."""
    regions = build_regions(grid, max_region_size)
    n = grid.n_free
    cell_probs = np.full(n, 1.0 / n)
    for r in regions:
        r.prob = r.area / n
    return SourcePosterior(
        regions=regions,
        cell_probs=cell_probs,
        variance_m2=_variance(cell_probs, grid),
    )


def _split(region: Region, grid: OccupancyGrid) -> list[Region]:
    """Quadrants of a multi-cell region (halves when one axis is unit)."""
    x0, y0, w, h = region.x0, region.y0, region.width, region.height
    wl = (w + 1) // 2 if w > 1 else w
    hl = (h + 1) // 2 if h > 1 else h
    blocks = []
    for (bx, by, bw, bh) in (
        (x0, y0, wl, hl),
        (x0 + wl, y0, w - wl, hl),
        (x0, y0 + hl, wl, h - hl),
        (x0 + wl, y0 + hl, w - wl, h - hl),
    ):
        if bw > 0 and bh > 0:
            blocks.append(Region(bx, by, bw, bh,
                                 representative=_representative(grid, bx, by, bw, bh)))
    return blocks


class _ScoreCache:
    """Per-round memo of candidate simulations (one shared seed)."""

    def __init__(self, hit_map: HitMap, grid: OccupancyGrid,
                 wind: WindField, sim_params: SimParams):
        self.grid = grid
        self.wind = wind
        self.sim_params = sim_params
        self.f_z = hit_map.hit_frequency_map()
        self.alpha = hit_map.alpha.copy()
        self.memo: dict[Cell, tuple[float, PlumePrediction]] = {}
        self.simulations = 0

    def _entry(self, cell: Cell) -> tuple[float, PlumePrediction]:
        got = self.memo.get(cell)
        if got is None:
            pred = simulate_plume(self.grid, self.wind, cell, self.sim_params)
            self.simulations += 1
            got = (_log_likelihood(self.f_z, self.alpha, pred.freq), pred)
            self.memo[cell] = got
        return got

    def loglik(self, cell: Cell) -> float:
        return self._entry(cell)[0]

    def prediction(self, cell: Cell) -> PlumePrediction:
        return self._entry(cell)[1]


def refine_round(
    posterior: SourcePosterior,
    rho: float,
    hit_map: HitMap,
    grid: OccupancyGrid,
    wind: WindField,
    sim_params: SimParams,
) -> SourcePosterior:
    """One coarse-to-fine estimation round.

    The first generation scores every leaf through its simulated
    representative and selects the top ceil(rho * count) by posterior
    mass (ties: larger area, then lower representative index); the
    selected multi-cell leaves are split, and each later generation
    recurses the same selection into the children just produced.
    Stops when the selected set is all single cells or after
    ceil(log2(max grid dimension)) generations. Simulation results are
    memoized for the round, so a representative inherited by a child
    costs nothing; every candidate in the round shares sim_params.seed
    (common random numbers), so rho = 1 reproduces full enumeration
    exactly.
    """
    if not 0.0 < rho <= 1.0:
        raise PlumesearchError("rho must lie in (0, 1]")
    if not posterior.regions:
        raise PlumesearchError("posterior has no leaves")
    t0 = time.perf_counter()
    cache = _ScoreCache(hit_map, grid, wind, sim_params)
    leaves = [replace(r) for r in posterior.regions]
    budget = max(1, math.ceil(math.log2(max(grid.width, grid.height))))
    generations = 0
    pool = list(leaves)  # the descent frontier: children of the last split

    for _ in range(budget):
        generations += 1
        logs = np.array([cache.loglik(r.representative) for r in pool])
        m = logs.max()
        mass = np.array([r.area for r in pool]) * np.exp(logs - m)
        order = sorted(
            range(len(pool)),
            key=lambda i: (-mass[i], -pool[i].area,
                           grid.linear_index(*pool[i].representative)),
        )
        selected = [pool[i] for i in order[: math.ceil(rho * len(pool))]]
        if all(r.is_unit for r in selected):
            break
        children: list[Region] = []
        chosen = {id(r) for r in selected if not r.is_unit}
        nxt: list[Region] = []
        for r in leaves:
            if id(r) in chosen:
                kids = _split(r, grid)
                children.extend(kids)
                nxt.extend(kids)
            else:
                nxt.append(r)
        leaves = nxt
        pool = children

    logs = np.array([cache.loglik(r.representative) for r in leaves])
    m = logs.max()
    if not np.isfinite(m):
        raise PlumesearchError("all candidate likelihoods vanished")

    free_index = grid.free_index()
    cell_vals = np.zeros(grid.n_free)
    for r, lg in zip(leaves, logs):
        v = math.exp(lg - m)
        for (x, y) in r.cells():
            cell_vals[free_index[y, x]] = v
    total = cell_vals.sum()
    cell_probs = cell_vals / total
    for r, lg in zip(leaves, logs):
        r.prob = r.area * math.exp(lg - m) / total

    out = SourcePosterior(
        regions=leaves,
        cell_probs=cell_probs,
        variance_m2=_variance(cell_probs, grid),
        leaf_predictions=[cache.prediction(r.representative) for r in leaves],
    )
    out.stats = RoundStats(
        simulations=cache.simulations,
        leaves=len(leaves),
        generations=generations,
        elapsed_s=time.perf_counter() - t0,
    )
    return out


def full_enumeration(
    hit_map: HitMap,
    grid: OccupancyGrid,
    wind: WindField,
    sim_params: SimParams,
) -> SourcePosterior:
    """Posterior with every free cell simulated as its own candidate."""
    t0 = time.perf_counter()
    cache = _ScoreCache(hit_map, grid, wind, sim_params)
    cells = grid.free_cells()
    logs = np.array([cache.loglik((int(x), int(y))) for x, y in cells])
    m = logs.max()
    if not np.isfinite(m):
        raise PlumesearchError("all candidate likelihoods vanished")
    vals = np.exp(logs - m)
    cell_probs = vals / vals.sum()
    regions = [
        Region(int(x), int(y), 1, 1, representative=(int(x), int(y)), prob=float(p))
        for (x, y), p in zip(cells, cell_probs)
    ]
    out = SourcePosterior(
        regions=regions,
        cell_probs=cell_probs,
        variance_m2=_variance(cell_probs, grid),
        leaf_predictions=[cache.prediction(r.representative) for r in regions],
    )
    out.stats = RoundStats(
        simulations=cache.simulations,
        leaves=len(regions),
        generations=0,
        elapsed_s=time.perf_counter() - t0,
    )
    return out


def _variance(cell_probs: np.ndarray, grid: OccupancyGrid) -> float:
    cells = grid.free_cells()
    centers = cells * grid.cell_size + np.asarray(grid.origin)
    mean = cell_probs @ centers
    d = centers - mean
    return float(cell_probs @ (d[:, 0] ** 2 + d[:, 1] ** 2))


def posterior_variance(posterior: SourcePosterior, grid: OccupancyGrid) -> float:
    """Trace of the 2D spatial covariance of the cell-level posterior, m^2."""
    return _variance(posterior.cell_probs, grid)


def kld(p: np.ndarray, q: np.ndarray) -> float:
    """Kullback-Leibler divergence sum(p ln(p/q)) in nats."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise PlumesearchError("distributions have different support sizes")
    mask = p > 0.0
    if np.any(q[mask] == 0.0):
        raise PlumesearchError("q has zero mass where p is positive")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
