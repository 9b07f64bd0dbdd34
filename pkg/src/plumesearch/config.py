"""Scenario configuration: INI-style files describing one experiment.

A scenario bundles the map, the true source, the robot start, the
world's wind, and every module parameter block, so a results CSV can
always be traced back to a self-describing config. Parsing collects
every violation before failing, and serialize/parse round-trips to an
identical configuration.
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MapParseError
from .filament import SimParams
from .grid import Cell, OccupancyGrid, load_occupancy
from .hitmap import KernelParams, validate_belief_params
from .wind import WindField, WindSolverParams

_REQUIRED = object()

# section -> key -> (converter name, default)
_SCHEMA = {
    "scenario": {
        "map": ("str", _REQUIRED),
        "source_cell": ("cell", _REQUIRED),
        "start_cell": ("cell", _REQUIRED),
        "max_iterations": ("int", 300),
        "convergence_variance_m2": ("float", 1.0),
        "seconds_per_iteration": ("float", 1.0),
        "measurements_per_round": ("int", 10),
        "eps_fp": ("float", 0.01),
        "eps_fn": ("float", 0.05),
        "wind_noise_std": ("float", 0.05),
    },
    "world": {
        "wind_x": ("float", 0.0),
        "wind_y": ("float", 0.0),
        "wind_csv": ("str", ""),
        "emission_factor": ("float", 4.0),
        "prewarm_s": ("optfloat", None),
    },
    "model_sim": {
        "dt": ("float", 0.1),
        "duration": ("float", 30.0),
        "warmup": ("float", 5.0),
        "emission_rate": ("float", 10.0),
        "r0": ("float", 0.1),
        "growth_rate": ("float", 0.02),
        "turbulence_std": ("float", 0.1),
    },
    "kernel": {
        "sigma0": ("float", 0.6),
        "stretch_gain": ("float", 1.0),
        "max_influence_radius": ("optfloat", None),
    },
    "hitmap": {
        "prior": ("float", 0.1),
        "p_hit": ("float", 0.8),
        "p_miss": ("float", 0.02),
        "sigma_conf": ("optfloat", None),
        "sigma_omega": ("float", 1.0),
    },
    "wind_estimation": {
        "data_weight": ("float", 1.0),
        "smoothness_weight": ("float", 0.1),
        "boundary_weight": ("float", 10.0),
        "tol": ("float", 1e-8),
    },
    "estimation": {
        "rho": ("float", 0.5),
        "max_region_size": ("int", 8),
    },
}


@dataclass
class ScenarioConfig:
    """Fully resolved experiment description."""

    map_ref: str
    grid: OccupancyGrid
    source_cell: Cell
    start_cell: Cell
    max_iterations: int
    convergence_variance_m2: float
    seconds_per_iteration: float
    measurements_per_round: int
    eps_fp: float
    eps_fn: float
    wind_noise_std: float
    wind_ref: str           # "" for uniform wind_x/wind_y
    world_wind: WindField
    emission_factor: float
    prewarm_s: float
    model_sim: SimParams
    kernel: KernelParams
    prior: float
    p_hit: float
    p_miss: float
    sigma_conf: float | None
    sigma_omega: float
    wind_params: WindSolverParams
    rho: float
    max_region_size: int
    raw: dict = field(default_factory=dict, repr=False)

    def to_text(self) -> str:
        """Serialize back to the INI format (inverse of parse_config)."""
        out = []
        for section, keys in _SCHEMA.items():
            out.append(f"[{section}]")
            for key in keys:
                out.append(f"{key} = {self.raw[section][key]}")
            out.append("")
        return "\n".join(out)


def _convert(kind: str, text: str):
    if kind == "str":
        return text
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "optfloat":
        if text.strip().lower() in ("", "auto", "none"):
            return None
        return float(text)
    if kind == "cell":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise ValueError("expected 'x,y'")
        return (int(parts[0]), int(parts[1]))
    raise AssertionError(kind)


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return f"{value[0]},{value[1]}"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _read_wind_csv(path: Path, grid: OccupancyGrid, problems: list[str]) -> WindField:
    vectors = np.zeros((grid.n_free, 2))
    seen = np.zeros(grid.n_free, dtype=bool)
    index = grid.free_index()
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                x, y = int(row["cell_x"]), int(row["cell_y"])
                if not grid.is_free(x, y):
                    problems.append(f"world.wind_csv: cell ({x},{y}) is not free")
                    continue
                i = index[y, x]
                vectors[i] = (float(row["u"]), float(row["v"]))
                seen[i] = True
    except (OSError, KeyError, ValueError) as e:
        problems.append(f"world.wind_csv: {e}")
        return WindField.uniform(grid, np.zeros(2))
    if not seen.all():
        problems.append(f"world.wind_csv: {int((~seen).sum())} free cells have no wind entry")
    return WindField(grid=grid, vectors=vectors, timestamp=0)


def parse_config(text: str, base_dir: str | Path = ".") -> ScenarioConfig:
    """Parse and validate a scenario; raises ConfigError listing every
    violated field at once."""
    base = Path(base_dir)
    parser = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=("#",))
    problems: list[str] = []
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError([f"syntax: {e}"]) from None

    raw: dict[str, dict[str, str]] = {}
    values: dict[str, dict] = {}
    for section, keys in _SCHEMA.items():
        raw[section] = {}
        values[section] = {}
        for key, (kind, default) in keys.items():
            if parser.has_option(section, key):
                text_value = parser.get(section, key)
                try:
                    values[section][key] = _convert(kind, text_value)
                    raw[section][key] = text_value.strip()
                    continue
                except ValueError as e:
                    problems.append(f"{section}.{key}: {e}")
            elif default is _REQUIRED:
                problems.append(f"{section}.{key}: required key is missing")
            values[section][key] = None if default is _REQUIRED else default
            raw[section][key] = _format(values[section][key])

    for section in parser.sections():
        if section not in _SCHEMA:
            problems.append(f"{section}: unknown section")
            continue
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                problems.append(f"{section}.{key}: unknown key")

    v = values
    grid = None
    if v["scenario"]["map"]:
        try:
            grid = load_occupancy(base / v["scenario"]["map"])
        except (OSError, MapParseError) as e:
            problems.append(f"scenario.map: {e}")
    if grid is None:
        raise ConfigError(problems or ["scenario.map: could not load"])

    for name in ("source_cell", "start_cell"):
        cell = v["scenario"][name]
        if cell is not None and not grid.is_free(*cell):
            problems.append(f"scenario.{name}: cell {cell} is not free")

    if v["scenario"]["max_iterations"] <= 0:
        problems.append("scenario.max_iterations: must be > 0")
    if not v["scenario"]["convergence_variance_m2"] > 0:
        problems.append("scenario.convergence_variance_m2: must be > 0")
    if not v["scenario"]["seconds_per_iteration"] > 0:
        problems.append("scenario.seconds_per_iteration: must be > 0")
    if v["scenario"]["measurements_per_round"] < 1:
        problems.append("scenario.measurements_per_round: must be >= 1")
    for key in ("eps_fp", "eps_fn"):
        if not 0.0 <= v["scenario"][key] <= 1.0:
            problems.append(f"scenario.{key}: must lie in [0, 1]")
    if v["scenario"]["wind_noise_std"] < 0:
        problems.append("scenario.wind_noise_std: must be >= 0")

    model_sim = SimParams(**v["model_sim"])
    problems += [f"model_sim: {p}" for p in model_sim.validate()]
    dt = model_sim.dt
    if dt > 0:
        spi = v["scenario"]["seconds_per_iteration"]
        if abs(round(spi / dt) * dt - spi) > 1e-9:
            problems.append(
                "scenario.seconds_per_iteration: must be a multiple of model_sim.dt"
            )

    kernel = KernelParams(**v["kernel"])
    problems += [f"kernel: {p}" for p in kernel.validate()]

    problems += [
        f"hitmap: {p}"
        for p in validate_belief_params(
            v["hitmap"]["prior"], v["hitmap"]["p_hit"], v["hitmap"]["p_miss"]
        )
    ]
    if v["hitmap"]["sigma_conf"] is not None and not v["hitmap"]["sigma_conf"] > 0:
        problems.append("hitmap.sigma_conf: must be > 0 (or auto)")
    if not v["hitmap"]["sigma_omega"] > 0:
        problems.append("hitmap.sigma_omega: must be > 0")

    wind_params = WindSolverParams(**v["wind_estimation"])
    problems += [f"wind_estimation: {p}" for p in wind_params.validate()]

    if not 0.0 < v["estimation"]["rho"] <= 1.0:
        problems.append("estimation.rho: must lie in (0, 1]")
    if v["estimation"]["max_region_size"] < 1:
        problems.append("estimation.max_region_size: must be >= 1")

    if not v["world"]["emission_factor"] > 0:
        problems.append("world.emission_factor: must be > 0")
    prewarm = v["world"]["prewarm_s"]
    if prewarm is None:
        prewarm = 2.0 * model_sim.duration
        raw["world"]["prewarm_s"] = "auto"
    elif prewarm < 0:
        problems.append("world.prewarm_s: must be >= 0")

    if v["world"]["wind_csv"]:
        world_wind = _read_wind_csv(base / v["world"]["wind_csv"], grid, problems)
    else:
        world_wind = WindField.uniform(
            grid, np.array([v["world"]["wind_x"], v["world"]["wind_y"]])
        )

    if problems:
        raise ConfigError(problems)

    return ScenarioConfig(
        map_ref=v["scenario"]["map"],
        grid=grid,
        source_cell=v["scenario"]["source_cell"],
        start_cell=v["scenario"]["start_cell"],
        max_iterations=v["scenario"]["max_iterations"],
        convergence_variance_m2=v["scenario"]["convergence_variance_m2"],
        seconds_per_iteration=v["scenario"]["seconds_per_iteration"],
        measurements_per_round=v["scenario"]["measurements_per_round"],
        eps_fp=v["scenario"]["eps_fp"],
        eps_fn=v["scenario"]["eps_fn"],
        wind_noise_std=v["scenario"]["wind_noise_std"],
        wind_ref=v["world"]["wind_csv"],
        world_wind=world_wind,
        emission_factor=v["world"]["emission_factor"],
        prewarm_s=prewarm,
        model_sim=model_sim,
        kernel=kernel,
        prior=v["hitmap"]["prior"],
        p_hit=v["hitmap"]["p_hit"],
        p_miss=v["hitmap"]["p_miss"],
        sigma_conf=v["hitmap"]["sigma_conf"],
        sigma_omega=v["hitmap"]["sigma_omega"],
        wind_params=wind_params,
        rho=v["estimation"]["rho"],
        max_region_size=v["estimation"]["max_region_size"],
        raw=raw,
    )


def load_config(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError([f"config file: {e}"]) from None
    return parse_config(text, base_dir=p.parent)
