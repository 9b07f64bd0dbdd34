"""Request and response schemas for the HTTP service.

Requests carry the scenario as text (the config plus any files it
references, keyed by the reference used inside the config), so a
request is self-contained and works against a remote server exactly as
it does in process. Responses mirror the harness result types;
converters on both ends keep float values exact across the JSON
boundary.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..harness import (
    BatchReport,
    BatchRow,
    KldRow,
    RoundTiming,
    RunResult,
    Snapshot,
    TrajectoryPoint,
)


class RunRequest(BaseModel):
    config_text: str
    files: dict[str, str] = Field(default_factory=dict)
    seed: int = 0
    snapshot_every: int | None = None


class BatchRequest(BaseModel):
    config_text: str
    files: dict[str, str] = Field(default_factory=dict)
    seeds: list[int]
    workers: int = 1


class KldStudyRequest(BaseModel):
    config_text: str
    files: dict[str, str] = Field(default_factory=dict)
    rho_values: list[float]
    seeds: list[int]


class RoundTimingModel(BaseModel):
    round_index: int
    iteration: int
    elapsed_s: float
    simulations: int
    variance_m2: float


class TrajectoryPointModel(BaseModel):
    t: float
    cell_x: int
    cell_y: int
    hit: int
    goal_x: int
    goal_y: int


class SnapshotModel(BaseModel):
    iteration: int
    hit_probs: list[float]
    alpha: list[float]
    cell_probs: list[float]


class RunResponse(BaseModel):
    seed: int
    converged: bool
    iterations: int
    argmax_cell: tuple[int, int]
    error_m: float
    expected_point_m: tuple[float, float]
    expected_error_m: float
    variance_m2: float
    rounds: list[RoundTimingModel]
    trajectory: list[TrajectoryPointModel]
    free_cells: list[tuple[int, int]] = Field(default_factory=list)
    snapshots: list[SnapshotModel] = Field(default_factory=list)


class BatchRowModel(BaseModel):
    seed: int
    status: str
    message: str = ""
    result: RunResponse | None = None


class BatchResponse(BaseModel):
    rows: list[BatchRowModel]
    # None stands in for NaN (an all-failed batch) across JSON
    mean_error_m: float | None
    median_error_m: float | None
    mean_iterations: float | None
    convergence_rate: float


class KldRowModel(BaseModel):
    seed: int
    rho: float
    round_index: int
    iteration: int
    kld_nats: float
    refined_s: float
    full_s: float
    refined_sims: int
    full_sims: int


class KldStudyResponse(BaseModel):
    rows: list[KldRowModel]


def run_response_from_result(result: RunResult, free_cells=None) -> RunResponse:
    return RunResponse(
        seed=result.seed,
        converged=result.converged,
        iterations=result.iterations,
        argmax_cell=result.argmax_cell,
        error_m=result.error_m,
        expected_point_m=result.expected_point_m,
        expected_error_m=result.expected_error_m,
        variance_m2=result.variance_m2,
        rounds=[RoundTimingModel(
            round_index=t.round_index, iteration=t.iteration,
            elapsed_s=t.elapsed_s, simulations=t.simulations,
            variance_m2=t.variance_m2) for t in result.round_timings],
        trajectory=[TrajectoryPointModel(
            t=p.t, cell_x=p.cell[0], cell_y=p.cell[1], hit=p.hit,
            goal_x=p.goal[0], goal_y=p.goal[1]) for p in result.trajectory],
        free_cells=[(int(x), int(y)) for x, y in free_cells]
        if result.snapshots and free_cells is not None else [],
        snapshots=[SnapshotModel(
            iteration=s.iteration,
            hit_probs=[float(v) for v in s.hit_probs],
            alpha=[float(v) for v in s.alpha],
            cell_probs=[float(v) for v in s.cell_probs],
        ) for s in result.snapshots],
    )


def result_from_run_response(resp: RunResponse) -> RunResult:
    import numpy as np

    return RunResult(
        seed=resp.seed,
        converged=resp.converged,
        iterations=resp.iterations,
        argmax_cell=tuple(resp.argmax_cell),
        error_m=resp.error_m,
        expected_point_m=tuple(resp.expected_point_m),
        expected_error_m=resp.expected_error_m,
        variance_m2=resp.variance_m2,
        round_timings=[RoundTiming(
            round_index=t.round_index, iteration=t.iteration,
            elapsed_s=t.elapsed_s, simulations=t.simulations,
            variance_m2=t.variance_m2) for t in resp.rounds],
        trajectory=[TrajectoryPoint(
            t=p.t, cell=(p.cell_x, p.cell_y), hit=p.hit,
            goal=(p.goal_x, p.goal_y)) for p in resp.trajectory],
        snapshots=[Snapshot(
            iteration=s.iteration,
            hit_probs=np.asarray(s.hit_probs),
            alpha=np.asarray(s.alpha),
            cell_probs=np.asarray(s.cell_probs),
        ) for s in resp.snapshots],
        final_posterior=None,
    )


def _nan_to_none(v: float) -> float | None:
    return None if v != v else v


def _none_to_nan(v: float | None) -> float:
    return float("nan") if v is None else v


def batch_response_from_report(report: BatchReport) -> BatchResponse:
    return BatchResponse(
        rows=[BatchRowModel(
            seed=row.seed,
            status=row.status,
            message=row.message,
            result=run_response_from_result(row.result)
            if row.result is not None else None,
        ) for row in report.rows],
        mean_error_m=_nan_to_none(report.mean_error_m),
        median_error_m=_nan_to_none(report.median_error_m),
        mean_iterations=_nan_to_none(report.mean_iterations),
        convergence_rate=report.convergence_rate,
    )


def report_from_batch_response(resp: BatchResponse) -> BatchReport:
    return BatchReport(
        rows=[BatchRow(
            seed=row.seed,
            status=row.status,
            message=row.message,
            result=result_from_run_response(row.result)
            if row.result is not None else None,
        ) for row in resp.rows],
        mean_error_m=_none_to_nan(resp.mean_error_m),
        median_error_m=_none_to_nan(resp.median_error_m),
        mean_iterations=_none_to_nan(resp.mean_iterations),
        convergence_rate=resp.convergence_rate,
    )


def kld_rows_from_response(resp: KldStudyResponse) -> list[KldRow]:
    return [KldRow(
        seed=r.seed, rho=r.rho, round_index=r.round_index,
        iteration=r.iteration, kld_nats=r.kld_nats, refined_s=r.refined_s,
        full_s=r.full_s, refined_sims=r.refined_sims, full_sims=r.full_sims,
    ) for r in resp.rows]
