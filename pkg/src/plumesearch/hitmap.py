"""Probabilistic gas-hit map.

Per-cell binary gas-presence belief in log-odds form, updated from
each measurement through a wind-stretched Gaussian influence kernel
evaluated along shortest obstacle-free paths, plus a saturating
per-cell confidence that tracks how well-observed each cell is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PlumesearchError
from .grid import Cell, GraphPartition, OccupancyGrid
from .wind import WindField

# log-odds clamp keeping the recovered probability strictly inside (0, 1)
# in float64 (expit saturates to exactly 1.0 near 36.7)
LOG_ODDS_LIMIT = 36.0

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def expit(l):
    return 1.0 - 1.0 / (1.0 + np.exp(np.minimum(l, 500.0)))


@dataclass(frozen=True)
class KernelParams:
    """Wind-stretched Gaussian influence kernel.

    The along-wind standard deviation is sigma0 * (1 + stretch_gain *
    |wind|); cross-wind stays sigma0. Influence is cut to zero beyond
    max_influence_radius (path-length meters); None means 4x the
    along-wind sigma of the measurement at hand.
    """

    sigma0: float = 0.6
    stretch_gain: float = 1.0
    max_influence_radius: float | None = None

    def validate(self) -> list[str]:
        out = []
        if not self.sigma0 > 0:
            out.append("kernel sigma0 must be > 0")
        if self.stretch_gain < 0:
            out.append("kernel stretch_gain must be >= 0")
        if self.max_influence_radius is not None and \
                self.max_influence_radius < 3.0 * self.sigma0:
            out.append("kernel max_influence_radius must be >= 3*sigma0")
        return out

    def along_wind_sigma(self, wind) -> float:
        speed = float(np.hypot(wind[0], wind[1]))
        return self.sigma0 * (1.0 + self.stretch_gain * speed)

    def cutoff_radius(self, wind) -> float:
        if self.max_influence_radius is not None:
            return self.max_influence_radius
        return 4.0 * self.along_wind_sigma(wind)


def kernel_covariance(wind, params: KernelParams) -> np.ndarray:
    """2x2 covariance of the influence kernel for a local wind vector."""
    problems = params.validate()
    if problems:
        raise PlumesearchError("; ".join(problems))
    wind = np.asarray(wind, dtype=float)
    speed = float(np.hypot(wind[0], wind[1]))
    s_along = params.along_wind_sigma(wind)
    s_cross = params.sigma0
    if speed == 0.0:
        return np.eye(2) * params.sigma0 ** 2
    c, s = wind[0] / speed, wind[1] / speed
    rot = np.array([[c, -s], [s, c]])
    return rot @ np.diag([s_along ** 2, s_cross ** 2]) @ rot.T


def _directional_precision(direction, wind, params: KernelParams) -> float:
    """d^T Sigma^-1 d for a unit displacement d along ``direction``."""
    s_along = params.along_wind_sigma(wind)
    s_cross = params.sigma0
    speed = float(np.hypot(wind[0], wind[1]))
    if speed == 0.0:
        return 1.0 / params.sigma0 ** 2
    ux, uy = wind[0] / speed, wind[1] / speed
    along = direction[0] * ux + direction[1] * uy
    cross = -direction[0] * uy + direction[1] * ux
    return along ** 2 / s_along ** 2 + cross ** 2 / s_cross ** 2


def influence(
    i: Cell,
    k: Cell,
    wind,
    partition: GraphPartition,
    params: KernelParams,
) -> float:
    """Influence factor of a measurement at cell k on cell i, in [0, 1].

    The kernel is evaluated at the displacement delta_ik * v_n, where
    delta_ik is the shortest obstacle-free path length and v_n the unit
    direction from k toward the first-step neighbor of i's group.
    Scaled so the value at i == k is exactly 1; zero for unreachable
    cells and beyond the cutoff radius.
    """
    if partition.robot_cell != tuple(k):
        raise PlumesearchError("partition must be rooted at the measurement cell")
    if not partition.reachable[i[1], i[0]]:
        return 0.0
    delta = partition.delta(i)
    if delta == 0.0:
        return 1.0
    if delta > params.cutoff_radius(wind):
        return 0.0
    direction = partition.direction(i)
    q = _directional_precision(direction, np.asarray(wind, dtype=float), params)
    return float(math.exp(-0.5 * delta * delta * q))


def conditional_hit(prior_p: float, lam: float, z: int,
                    p_hit: float, p_miss: float) -> float:
    """Inverse sensor value p(H_i | z_k): interpolate between the
    direct-observation extreme and the prior by the influence factor."""
    extreme = p_hit if z else p_miss
    return lam * extreme + (1.0 - lam) * prior_p


@dataclass
class Measurement:
    """One observation: cell index, binary gas hit, local wind, time."""

    cell: Cell
    hit: int
    wind: np.ndarray
    t: int

    def __post_init__(self):
        self.cell = (int(self.cell[0]), int(self.cell[1]))
        self.hit = int(bool(self.hit))
        self.wind = np.asarray(self.wind, dtype=float)
        if not np.all(np.isfinite(self.wind)):
            raise PlumesearchError(f"non-finite wind in measurement at {self.cell}")


class HitMap:
    """Log-odds gas-presence belief plus per-cell confidence.

    Cells never touched by a measurement keep log-odds equal to
    logit(prior) bitwise. Confidence alpha saturates toward (but never
    reaches) 1 as proximity mass omega accumulates.
    """

    def __init__(
        self,
        grid: OccupancyGrid,
        prior: float = 0.1,
        p_hit: float = 0.8,
        p_miss: float = 0.02,
        sigma_conf: float | None = None,
        sigma_omega: float = 1.0,
    ):
        problems = validate_belief_params(prior, p_hit, p_miss)
        if sigma_conf is not None and not sigma_conf > 0:
            problems.append("sigma_conf must be > 0")
        if not sigma_omega > 0:
            problems.append("sigma_omega must be > 0")
        if problems:
            raise PlumesearchError("; ".join(problems))
        self.grid = grid
        self.prior = prior
        self.p_hit = p_hit
        self.p_miss = p_miss
        self.sigma_conf = sigma_conf if sigma_conf is not None else 2.0 * grid.cell_size
        self.sigma_omega = sigma_omega
        n = grid.n_free
        self._logit_prior = logit(prior)
        self.log_odds = np.full(n, self._logit_prior)
        self.omega = np.zeros(n)
        self.alpha = np.zeros(n)
        self._free_cells = grid.free_cells()
        self._free_index = grid.free_index()

    def copy(self) -> "HitMap":
        dup = HitMap.__new__(HitMap)
        dup.__dict__.update(self.__dict__)
        dup.log_odds = self.log_odds.copy()
        dup.omega = self.omega.copy()
        dup.alpha = self.alpha.copy()
        return dup

    def update(
        self,
        m: Measurement,
        partition: GraphPartition,
        wind_field: WindField | None,
        params: KernelParams,
    ) -> None:
        """Fold one measurement into the belief (binary Bayes filter).

        The kernel wind is the estimated field value at the measurement
        cell when a field is given, otherwise the measurement's own
        local wind reading.
        """
        if partition.robot_cell != m.cell:
            raise PlumesearchError("partition must be rooted at the measurement cell")
        problems = params.validate()
        if problems:
            raise PlumesearchError("; ".join(problems))
        wind = (wind_field.vector_at(m.cell) if wind_field is not None
                else m.wind)

        xs, ys = self._free_cells[:, 0], self._free_cells[:, 1]
        delta = partition.path_length[ys, xs]
        groups = partition.group[ys, xs]
        cutoff = params.cutoff_radius(wind)
        mask = partition.reachable[ys, xs] & (delta <= cutoff)

        lam = np.zeros(len(xs))
        for g, direction in partition.neighbor_dirs.items():
            sel = mask & (groups == g)
            if not sel.any():
                continue
            q = _directional_precision(direction, wind, params)
            lam[sel] = np.exp(-0.5 * delta[sel] ** 2 * q)
        lam[mask & (delta == 0.0)] = 1.0  # the measured cell itself

        extreme = self.p_hit if m.hit else self.p_miss
        cond = lam[mask] * extreme + (1.0 - lam[mask]) * self.prior
        self.log_odds[mask] += np.log(cond / (1.0 - cond)) - self._logit_prior
        np.clip(self.log_odds, -LOG_ODDS_LIMIT, LOG_ODDS_LIMIT, out=self.log_odds)

        gauss = np.exp(-0.5 * (delta[mask] / self.sigma_conf) ** 2) / (
            self.sigma_conf * _SQRT_2PI
        )
        self.omega[mask] += gauss
        self.alpha[mask] = 1.0 - np.exp(-self.omega[mask] ** 2 / self.sigma_omega ** 2)

    def hit_frequency_map(self) -> np.ndarray:
        """Per-free-cell hit probability p(H_i | Z) recovered from log-odds."""
        return expit(self.log_odds)

    def probability_at(self, cell: Cell) -> float:
        i = self._free_index[cell[1], cell[0]]
        if i < 0:
            raise PlumesearchError(f"cell {cell} is occupied")
        return float(expit(self.log_odds[i]))

    def alpha_at(self, cell: Cell) -> float:
        i = self._free_index[cell[1], cell[0]]
        if i < 0:
            raise PlumesearchError(f"cell {cell} is occupied")
        return float(self.alpha[i])


def validate_belief_params(prior: float, p_hit: float, p_miss: float) -> list[str]:
    out = []
    if not 0.0 < prior < 1.0:
        out.append("prior must lie in (0, 1)")
    if not 0.0 < p_hit < 1.0:
        out.append("p_hit must lie in (0, 1)")
    if not 0.0 < p_miss < 1.0:
        out.append("p_miss must lie in (0, 1)")
    if out:
        return out
    if not p_miss < prior:
        out.append("p_miss must be < prior")
    if not prior < p_hit:
        out.append("prior must be < p_hit")
    return out
