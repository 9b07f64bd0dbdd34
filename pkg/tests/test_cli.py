import csv

import pytest

from plumesearch.cli import main

MAP_TEXT = """cell_size 0.5
........
..##....
..##....
........
........
........
"""

CONFIG_TEXT = """
[scenario]
map = arena.map
source_cell = 6,1
start_cell = 1,4
max_iterations = 15
convergence_variance_m2 = 1e-9
measurements_per_round = 5

[world]
wind_x = 0.3
prewarm_s = 8.0

[model_sim]
duration = 4.0
warmup = 1.0
emission_rate = 6.0

[estimation]
rho = 0.5
max_region_size = 4
"""


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_scenario")
    (d / "arena.map").write_text(MAP_TEXT)
    (d / "demo.cfg").write_text(CONFIG_TEXT)
    return d / "demo.cfg"


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh
                                   if not line.startswith("#")))


def test_run_writes_artifacts(scenario, tmp_path, capsys):
    out = tmp_path / "run_out"
    code = main(["run", "--config", str(scenario), "--seed", "3",
                 "--out", str(out)])
    assert code == 0
    assert (out / "results.csv").exists()
    assert (out / "trajectory_3.csv").exists()
    assert (out / "timings_3.csv").exists()
    rows = _rows(out / "results.csv")
    assert len(rows) == 1 and rows[0]["seed"] == "3"
    traj = _rows(out / "trajectory_3.csv")
    assert list(traj[0]) == ["t", "cell_x", "cell_y", "hit", "goal_x",
                             "goal_y"]
    assert "iterations" in capsys.readouterr().out


def test_run_snapshot_flag(scenario, tmp_path):
    out = tmp_path / "snap_out"
    code = main(["run", "--config", str(scenario), "--seed", "3",
                 "--snapshot-every", "5", "--out", str(out)])
    assert code == 0
    hitmaps = sorted(out.glob("hitmap_*.csv"))
    posteriors = sorted(out.glob("posterior_*.csv"))
    assert hitmaps and len(hitmaps) == len(posteriors)
    rows = _rows(hitmaps[0])
    assert list(rows[0]) == ["cell_x", "cell_y", "probability", "alpha"]


def test_run_deterministic_artifacts(scenario, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(scenario), "--seed", "9",
                 "--out", str(out_a)]) == 0
    assert main(["run", "--config", str(scenario), "--seed", "9",
                 "--out", str(out_b)]) == 0
    assert (out_a / "trajectory_9.csv").read_bytes() == \
           (out_b / "trajectory_9.csv").read_bytes()
    assert (out_a / "results.csv").read_bytes() == \
           (out_b / "results.csv").read_bytes()


def test_batch_command(scenario, tmp_path):
    out = tmp_path / "batch_out"
    code = main(["batch", "--config", str(scenario), "--seeds", "1,2",
                 "--out", str(out)])
    assert code == 0
    assert len(_rows(out / "results.csv")) == 2
    assert (out / "trajectory_1.csv").exists()
    assert (out / "trajectory_2.csv").exists()


def test_kld_study_command(scenario, tmp_path):
    out = tmp_path / "kld_out"
    code = main(["kld-study", "--config", str(scenario), "--rho", "1.0,0.5",
                 "--seeds", "4", "--out", str(out)])
    assert code == 0
    rows = _rows(out / "kld_study.csv")
    assert rows
    ones = [r for r in rows if float(r["rho"]) == 1.0]
    assert ones and all(abs(float(r["kld_nats"])) < 1e-12 for r in ones)


def test_dump_maps_command(scenario, tmp_path):
    out = tmp_path / "maps_out"
    code = main(["dump-maps", "--config", str(scenario), "--seed", "2",
                 "--snapshot-every", "5", "--out", str(out)])
    assert code == 0
    assert list(out.glob("hitmap_*.csv"))
    assert list(out.glob("posterior_*.csv"))
    assert (out / "trajectory_2.csv").exists()


def test_config_error_exit_code(scenario, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(CONFIG_TEXT.replace("rho = 0.5", "rho = 2.0"))
    (tmp_path / "arena.map").write_text(MAP_TEXT)
    code = main(["run", "--config", str(bad), "--out",
                 str(tmp_path / "o")])
    assert code == 2
    assert "rho" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "nope.cfg"),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "config" in capsys.readouterr().err.lower()


def test_runtime_error_exit_code(tmp_path, capsys):
    # Sealed-off pocket: wind estimation is singular at runtime.
    (tmp_path / "pocket.map").write_text(
        "cell_size 0.5\n.....\n.....\n#####\n.....\n")
    cfg = tmp_path / "pocket.cfg"
    cfg.write_text(CONFIG_TEXT
                   .replace("arena.map", "pocket.map")
                   .replace("source_cell = 6,1", "source_cell = 3,0")
                   .replace("start_cell = 1,4", "start_cell = 0,1"))
    code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "error" in capsys.readouterr().err
