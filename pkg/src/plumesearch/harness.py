"""Closed-loop experiment execution and artifact emission.

One iteration is one measurement: sample the world at the robot cell,
fold it into the hit map, and step one cell toward the current goal.
A full source-estimation round runs on goal arrival or every
measurements_per_round measurements, whichever comes first, and the
run stops once the posterior's spatial variance falls below the
configured threshold.

Every run is driven by three independent seed streams spawned from the
run seed (world, sensor noise, per-round simulation seeds), so results
are reproducible bit for bit. Wall-clock timings are kept out of
results and trajectory CSVs so fixed-seed reruns emit identical bytes.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .errors import PlumesearchError
from .estimator import (
    SourcePosterior,
    full_enumeration,
    initial_posterior,
    kld,
    refine_round,
)
from .filament import FilamentWorld, sample_ground_truth
from .grid import Cell, build_partition
from .hitmap import HitMap, Measurement
from .movement import advance, info_value, select_goal
from .wind import WindObservationBuffer, estimate_wind


@dataclass
class TrajectoryPoint:
    t: float
    cell: Cell
    hit: int
    goal: Cell


@dataclass
class RoundTiming:
    round_index: int
    iteration: int
    elapsed_s: float
    simulations: int
    variance_m2: float


@dataclass
class Snapshot:
    iteration: int
    hit_probs: np.ndarray
    alpha: np.ndarray
    cell_probs: np.ndarray


@dataclass
class RunResult:
    seed: int
    converged: bool
    iterations: int
    argmax_cell: Cell
    error_m: float
    expected_point_m: tuple[float, float]
    expected_error_m: float
    variance_m2: float
    round_timings: list[RoundTiming]
    trajectory: list[TrajectoryPoint]
    snapshots: list[Snapshot] = field(default_factory=list)
    final_posterior: SourcePosterior | None = None


def _estimate_points(posterior: SourcePosterior, config: ScenarioConfig):
    grid = config.grid
    source = np.asarray(grid.cell_center(*config.source_cell))
    am = posterior.argmax_cell(grid)
    err = float(np.linalg.norm(np.asarray(grid.cell_center(*am)) - source))
    centers = grid.free_cells() * grid.cell_size + np.asarray(grid.origin)
    expected = posterior.cell_probs @ centers
    e_err = float(np.linalg.norm(expected - source))
    return am, err, (float(expected[0]), float(expected[1])), e_err


def run_one(
    config: ScenarioConfig,
    seed: int,
    snapshot_every: int | None = None,
    _round_hook=None,
) -> RunResult:
    """Execute one seeded closed-loop run to convergence or budget."""
    grid = config.grid
    ss = np.random.SeedSequence(int(seed))
    world_ss, sensor_ss, rounds_ss = ss.spawn(3)
    sensor_rng = np.random.default_rng(sensor_ss)
    round_rng = np.random.default_rng(rounds_ss)

    world_params = replace(
        config.model_sim,
        emission_rate=config.model_sim.emission_rate * config.emission_factor,
        seed=None,
    )
    world = FilamentWorld(
        grid,
        config.world_wind,
        config.source_cell,
        world_params,
        seed=world_ss,
        prewarm=config.prewarm_s,
    )

    hit_map = HitMap(
        grid,
        prior=config.prior,
        p_hit=config.p_hit,
        p_miss=config.p_miss,
        sigma_conf=config.sigma_conf,
        sigma_omega=config.sigma_omega,
    )
    base = initial_posterior(grid, config.max_region_size)
    buffer = WindObservationBuffer()
    partitions: dict[Cell, object] = {}

    robot = config.start_cell
    goal: Cell | None = None
    posterior: SourcePosterior | None = None
    converged = False
    since_round = 0
    round_timings: list[RoundTiming] = []
    trajectory: list[TrajectoryPoint] = []
    snapshots: list[Snapshot] = []
    iterations = 0

    for i in range(1, config.max_iterations + 1):
        iterations = i
        t = (i - 1) * config.seconds_per_iteration

        hit, wind_meas = sample_ground_truth(
            world, robot, (config.eps_fp, config.eps_fn), sensor_rng,
            wind_noise_std=config.wind_noise_std,
        )
        buffer.add(robot, wind_meas, t=i)
        wind_field = estimate_wind(
            grid, buffer.observations(), config.wind_params, timestamp=i
        )
        if robot not in partitions:
            partitions[robot] = build_partition(grid, robot)
        partition = partitions[robot]
        hit_map.update(
            Measurement(cell=robot, hit=hit, wind=wind_meas, t=i),
            partition, wind_field, config.kernel,
        )
        since_round += 1

        if goal is None or robot == goal or since_round >= config.measurements_per_round:
            sim_params = replace(
                config.model_sim, seed=int(round_rng.integers(1 << 62))
            )
            posterior = refine_round(
                base, config.rho, hit_map, grid, wind_field, sim_params
            )
            since_round = 0
            round_timings.append(RoundTiming(
                round_index=len(round_timings) + 1,
                iteration=i,
                elapsed_s=posterior.stats.elapsed_s,
                simulations=posterior.stats.simulations,
                variance_m2=posterior.variance_m2,
            ))
            if _round_hook is not None:
                _round_hook(len(round_timings), i, sim_params, posterior,
                            hit_map, wind_field)
            probs = np.array([r.prob for r in posterior.regions])
            psi = info_value(hit_map.alpha, probs, posterior.leaf_predictions)
            goal = select_goal(psi, hit_map.alpha, grid, robot, partition)
            converged = posterior.variance_m2 < config.convergence_variance_m2

        trajectory.append(TrajectoryPoint(t=t, cell=robot, hit=hit, goal=goal))
        if snapshot_every and (i % snapshot_every == 0 or converged
                               or i == config.max_iterations):
            snapshots.append(Snapshot(
                iteration=i,
                hit_probs=hit_map.hit_frequency_map(),
                alpha=hit_map.alpha.copy(),
                cell_probs=posterior.cell_probs.copy(),
            ))
        if converged:
            break

        robot = advance(robot, goal, grid)
        world.advance(config.seconds_per_iteration)

    am, err, expected, e_err = _estimate_points(posterior, config)
    return RunResult(
        seed=int(seed),
        converged=converged,
        iterations=iterations,
        argmax_cell=am,
        error_m=err,
        expected_point_m=expected,
        expected_error_m=e_err,
        variance_m2=posterior.variance_m2,
        round_timings=round_timings,
        trajectory=trajectory,
        snapshots=snapshots,
        final_posterior=posterior,
    )


@dataclass
class BatchRow:
    seed: int
    status: str                 # "ok" or "error"
    result: RunResult | None
    message: str = ""


@dataclass
class BatchReport:
    rows: list[BatchRow]
    mean_error_m: float
    median_error_m: float
    mean_iterations: float
    convergence_rate: float

    @property
    def results(self) -> list[RunResult]:
        return [r.result for r in self.rows if r.result is not None]


def _one_row(config: ScenarioConfig, seed: int) -> BatchRow:
    try:
        return BatchRow(int(seed), "ok", run_one(config, seed))
    except Exception as e:  # noqa: BLE001 - aggregate report must survive
        return BatchRow(int(seed), "error", None, message=str(e))


def run_batch(config: ScenarioConfig, seeds: list[int],
              workers: int = 1) -> BatchReport:
    """Independent runs per seed; per-run failures are recorded, not fatal.

    Runs share nothing, so with workers > 1 they execute on a thread
    pool; row order and content depend only on the seed list.
    """
    if not seeds:
        raise PlumesearchError("run_batch needs at least one seed")
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda s: _one_row(config, s), seeds))
    else:
        rows = [_one_row(config, s) for s in seeds]
    ok = [r.result for r in rows if r.status == "ok"]
    errors = [r.error_m for r in ok]
    return BatchReport(
        rows=rows,
        mean_error_m=float(statistics.fmean(errors)) if errors else float("nan"),
        median_error_m=float(statistics.median(errors)) if errors else float("nan"),
        mean_iterations=float(statistics.fmean(r.iterations for r in ok))
        if ok else float("nan"),
        convergence_rate=sum(r.converged for r in ok) / len(seeds),
    )


@dataclass
class KldRow:
    seed: int
    rho: float
    round_index: int
    iteration: int
    kld_nats: float
    refined_s: float
    full_s: float
    refined_sims: int
    full_sims: int


def kld_study(
    config: ScenarioConfig,
    rho_values: list[float],
    seeds: list[int],
) -> list[KldRow]:
    """Closed-loop refinement quality study.

    For every rho a separate loop runs (movement driven by that rho's
    refined posterior); at each estimation round the exact posterior is
    also computed from the same hit map and simulation seed, and the
    divergence plus both wall times are recorded.
    """
    for rho in rho_values:
        if not 0.0 < rho <= 1.0:
            raise PlumesearchError(f"rho {rho} must lie in (0, 1]")
    if not seeds:
        raise PlumesearchError("kld_study needs at least one seed")
    out: list[KldRow] = []
    for seed in seeds:
        for rho in rho_values:
            cfg = replace(config, rho=float(rho))
            rows: list[KldRow] = []

            def hook(round_index, iteration, sim_params, posterior,
                     hit_map, wind_field, _rho=rho, _seed=seed, _rows=rows):
                full = full_enumeration(hit_map, config.grid, wind_field,
                                        sim_params)
                _rows.append(KldRow(
                    seed=int(_seed),
                    rho=float(_rho),
                    round_index=round_index,
                    iteration=iteration,
                    kld_nats=kld(posterior.cell_probs, full.cell_probs),
                    refined_s=posterior.stats.elapsed_s,
                    full_s=full.stats.elapsed_s,
                    refined_sims=posterior.stats.simulations,
                    full_sims=full.stats.simulations,
                ))

            run_one(cfg, seed, _round_hook=hook)
            out.extend(rows)
    return out


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def _write_rows(path: Path, header: list[str], rows, comments: list[str] = ()):
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        for line in comments:
            fh.write(f"# {line}\n")


def write_results_csv(report: BatchReport, path: str | Path) -> None:
    header = ["seed", "status", "converged", "iterations", "argmax_x",
              "argmax_y", "error_m", "expected_x_m", "expected_y_m",
              "expected_error_m", "variance_m2", "rounds", "message"]
    rows = []
    for row in report.rows:
        r = row.result
        if r is None:
            rows.append([row.seed, row.status, "", "", "", "", "", "", "",
                         "", "", "", row.message])
        else:
            rows.append([
                r.seed, row.status, int(r.converged), r.iterations,
                r.argmax_cell[0], r.argmax_cell[1], r.error_m,
                r.expected_point_m[0], r.expected_point_m[1],
                r.expected_error_m, r.variance_m2, len(r.round_timings), "",
            ])
    comments = [
        "summary runs=%d convergence_rate=%s mean_error_m=%s "
        "median_error_m=%s mean_iterations=%s" % (
            len(report.rows), _fmt(report.convergence_rate),
            _fmt(report.mean_error_m), _fmt(report.median_error_m),
            _fmt(report.mean_iterations),
        )
    ]
    _write_rows(Path(path), header, rows, comments)


def write_trajectory_csv(result: RunResult, path: str | Path) -> None:
    rows = [[p.t, p.cell[0], p.cell[1], p.hit, p.goal[0], p.goal[1]]
            for p in result.trajectory]
    _write_rows(Path(path), ["t", "cell_x", "cell_y", "hit", "goal_x",
                             "goal_y"], rows)


def write_timings_csv(result: RunResult, path: str | Path) -> None:
    rows = [[t.round_index, t.iteration, t.elapsed_s, t.simulations,
             t.variance_m2] for t in result.round_timings]
    _write_rows(Path(path), ["round", "iteration", "elapsed_s",
                             "simulations", "variance_m2"], rows)


def write_snapshot_csvs(result: RunResult, config: ScenarioConfig,
                        out_dir: str | Path) -> list[Path]:
    """hitmap_<iter>.csv and posterior_<iter>.csv per stored snapshot."""
    out = Path(out_dir)
    cells = config.grid.free_cells()
    written = []
    for snap in result.snapshots:
        hp = out / f"hitmap_{snap.iteration}.csv"
        rows = [[int(x), int(y), p, a] for (x, y), p, a in
                zip(cells, snap.hit_probs, snap.alpha)]
        _write_rows(hp, ["cell_x", "cell_y", "probability", "alpha"], rows)
        pp = out / f"posterior_{snap.iteration}.csv"
        rows = [[int(x), int(y), p] for (x, y), p in
                zip(cells, snap.cell_probs)]
        _write_rows(pp, ["cell_x", "cell_y", "probability"], rows)
        written += [hp, pp]
    return written


def write_kld_csv(rows: list[KldRow], path: str | Path) -> None:
    out = [[r.seed, r.rho, r.round_index, r.iteration, r.kld_nats,
            r.refined_s, r.full_s, r.refined_sims, r.full_sims]
           for r in rows]
    _write_rows(Path(path), ["seed", "rho", "round", "iteration", "kld_nats",
                             "refined_s", "full_s", "refined_sims",
                             "full_sims"], out)
