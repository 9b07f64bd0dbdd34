"""Command line interface.

Thin client over the HTTP service: every subcommand builds a
self-contained request (config text plus referenced files) and posts it
to an in-process app instance, or to a remote one when --server is
given. Artifacts are written locally under --out.

Exit codes: 0 success, 2 invalid configuration, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import parse_config
from .errors import ConfigError
from .harness import (
    BatchReport,
    BatchRow,
    write_kld_csv,
    write_results_csv,
    write_snapshot_csvs,
    write_timings_csv,
    write_trajectory_csv,
)
from .service.models import (
    BatchResponse,
    KldStudyResponse,
    RunResponse,
    kld_rows_from_response,
    report_from_batch_response,
    result_from_run_response,
)


def _parse_int_list(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def _load_scenario(config_path: str):
    """Validate locally and inline every file the config references."""
    path = Path(config_path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError([f"config file: {e}"]) from None
    cfg = parse_config(text, base_dir=path.parent)
    files = {cfg.map_ref: (path.parent / cfg.map_ref).read_text()}
    if cfg.wind_ref:
        files[cfg.wind_ref] = (path.parent / cfg.wind_ref).read_text()
    return cfg, {"config_text": text, "files": files}


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _post(client, route: str, payload: dict) -> dict:
    resp = client.post(route, json=payload)
    if resp.status_code == 422:
        body = resp.json()
        raise ConfigError(body.get("violations") or [body.get("detail", "invalid request")])
    if resp.status_code != 200:
        detail = resp.json().get("detail", resp.text)
        raise RuntimeError(f"{route} failed ({resp.status_code}): {detail}")
    return resp.json()


def _single_report(result) -> BatchReport:
    return BatchReport(
        rows=[BatchRow(result.seed, "ok", result)],
        mean_error_m=result.error_m,
        median_error_m=result.error_m,
        mean_iterations=float(result.iterations),
        convergence_rate=float(result.converged),
    )


def _cmd_run(args, client) -> int:
    cfg, payload = _load_scenario(args.config)
    payload["seed"] = args.seed
    payload["snapshot_every"] = args.snapshot_every
    data = _post(client, "/run", payload)
    result = result_from_run_response(RunResponse.model_validate(data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(_single_report(result), out / "results.csv")
    write_trajectory_csv(result, out / f"trajectory_{result.seed}.csv")
    write_timings_csv(result, out / f"timings_{result.seed}.csv")
    if result.snapshots:
        write_snapshot_csvs(result, cfg, out)
    state = "converged" if result.converged else "did not converge"
    print(f"seed {result.seed}: {state} after {result.iterations} iterations, "
          f"argmax error {result.error_m:.3f} m")
    print(f"artifacts written to {out}")
    return 0


def _cmd_batch(args, client) -> int:
    cfg, payload = _load_scenario(args.config)
    payload["seeds"] = _parse_int_list(args.seeds)
    payload["workers"] = args.workers
    data = _post(client, "/batch", payload)
    report = report_from_batch_response(BatchResponse.model_validate(data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(report, out / "results.csv")
    for row in report.rows:
        if row.result is not None:
            write_trajectory_csv(row.result, out / f"trajectory_{row.seed}.csv")
            write_timings_csv(row.result, out / f"timings_{row.seed}.csv")
    print(f"{len(report.rows)} runs: convergence rate "
          f"{report.convergence_rate:.2f}, mean error {report.mean_error_m:.3f} m, "
          f"mean iterations {report.mean_iterations:.1f}")
    print(f"artifacts written to {out}")
    return 0


def _cmd_kld_study(args, client) -> int:
    cfg, payload = _load_scenario(args.config)
    payload["rho_values"] = _parse_float_list(args.rho)
    payload["seeds"] = _parse_int_list(args.seeds)
    data = _post(client, "/kld-study", payload)
    rows = kld_rows_from_response(KldStudyResponse.model_validate(data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_kld_csv(rows, out / "kld_study.csv")
    print(f"{len(rows)} study rows written to {out / 'kld_study.csv'}")
    return 0


def _cmd_dump_maps(args, client) -> int:
    cfg, payload = _load_scenario(args.config)
    payload["seed"] = args.seed
    payload["snapshot_every"] = args.snapshot_every
    data = _post(client, "/run", payload)
    result = result_from_run_response(RunResponse.model_validate(data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = write_snapshot_csvs(result, cfg, out)
    write_trajectory_csv(result, out / f"trajectory_{result.seed}.csv")
    print(f"{len(files)} map files written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plumesearch",
        description="Gas source localization experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--server", default=None,
                       help="remote service URL (default: run in process)")

    p = sub.add_parser("run", help="single seeded run")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snapshot-every", type=int, default=None,
                   help="also dump hit map and posterior every N iterations")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("batch", help="independent runs over a seed list")
    common(p)
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_batch)

    p = sub.add_parser("kld-study", help="refinement quality/timing study")
    common(p)
    p.add_argument("--rho", default="0.1,0.5,1.0",
                   help="comma-separated refinement fractions")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.set_defaults(func=_cmd_kld_study)

    p = sub.add_parser("dump-maps", help="run one seed and dump map snapshots")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snapshot-every", type=int, default=10)
    p.set_defaults(func=_cmd_dump_maps)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        client = _client(args.server)
        try:
            return args.func(args, client)
        finally:
            client.close()
    except ConfigError as e:
        for violation in e.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
