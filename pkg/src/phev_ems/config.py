"""TOML configuration for vehicle, solver, DP and run parameters.

Every section and key is optional; omitted values take the defaults of the
corresponding dataclass. Example::

    [vehicle]
    mass_kg = 1800.0
    gear_table = [[0, 46.7], [5, 28.0], [10, 18.7], [15, 13.3], [22, 10.7]]

    [vehicle.engine_loss_map]      # coefficients in ascending powers of speed
    c2 = [2.0e-6]
    c1 = [2.2, 1.0e-3]
    c0 = [3000.0, 20.0]

    [admm]
    rho4 = 2000.0
    epsilon = 7.0e4

    [dp]
    soc_step_frac = 0.001
    power_step_frac = 0.01
    interpolation = "linear"

    [problem]
    soc_init_frac = 0.6
    kd = 1.0e4

    [run]
    strategies = ["admm", "dp", "cdcs"]
    linear_solves = "dense"

The path may also come from the ``PHEV_EMS_CONFIG`` environment variable.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .admm import Penalties
from .baselines import DpGrids
from .params import ParameterError, QuadraticLossMap, VehicleParams

CONFIG_ENV = "PHEV_EMS_CONFIG"
STRATEGIES = ("admm", "dp", "cdcs")
PROBLEM_KEYS = ("soc_init_frac", "soc_min_frac", "soc_max_frac", "kd", "saturate_regen")
RUN_KEYS = ("strategies", "linear_solves", "fuel_energy_density_J_per_g")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class RunOptions:
    soc_init_frac: float = 0.6
    soc_min_frac: float = 0.4
    soc_max_frac: float = 0.7
    kd: float = 1e4
    saturate_regen: bool = True
    strategies: tuple[str, ...] = STRATEGIES
    linear_solves: str = "dense"
    fuel_energy_density_J_per_g: float = 43e3

    def problem_kwargs(self) -> dict:
        return dict(soc_init_frac=self.soc_init_frac, soc_min_frac=self.soc_min_frac,
                    soc_max_frac=self.soc_max_frac, kd=self.kd, saturate_regen=self.saturate_regen)


@dataclass(frozen=True)
class Config:
    vehicle: VehicleParams
    penalties: Penalties
    grids: DpGrids
    run: RunOptions

    def __iter__(self):
        return iter((self.vehicle, self.penalties, self.grids, self.run))


def _number(key, value, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _number_list(key, value):
    if not isinstance(value, list) or not value:
        raise ConfigError(key, f"expected a non-empty list of numbers, got {value!r}")
    return tuple(_number(f"{key}[{i}]", v) for i, v in enumerate(value))


def _coerce(section: str, cls, table: dict, special=None) -> dict:
    """Check ``table`` against the fields of ``cls`` and convert the values."""
    special = special or {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for name, value in table.items():
        key = f"{section}.{name}"
        if name not in fields:
            raise ConfigError(key, "unknown key")
        if name in special:
            out[name] = special[name](key, value)
            continue
        default = fields[name].default
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(key, f"expected true or false, got {value!r}")
            out[name] = value
        elif isinstance(default, int):
            out[name] = _number(key, value, integer=True)
        elif isinstance(default, float):
            out[name] = _number(key, value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(key, f"expected a string, got {value!r}")
            out[name] = value
        else:
            raise ConfigError(key, "unsupported value")
    return out


def _loss_map(key, value):
    if not isinstance(value, dict):
        raise ConfigError(key, "expected a table with c2, c1, c0")
    unknown = set(value) - {"c2", "c1", "c0"}
    if unknown:
        raise ConfigError(f"{key}.{sorted(unknown)[0]}", "unknown key")
    missing = [c for c in ("c2", "c1", "c0") if c not in value]
    if missing:
        raise ConfigError(f"{key}.{missing[0]}", "missing coefficient list")
    return QuadraticLossMap(**{c: _number_list(f"{key}.{c}", value[c]) for c in ("c2", "c1", "c0")})


def _gear_table(key, value):
    if not isinstance(value, list) or not value:
        raise ConfigError(key, "expected a list of [velocity threshold, ratio] pairs")
    rows = []
    for i, row in enumerate(value):
        if not isinstance(row, list) or len(row) != 2:
            raise ConfigError(f"{key}[{i}]", "expected a [velocity threshold, ratio] pair")
        rows.append((_number(f"{key}[{i}][0]", row[0]), _number(f"{key}[{i}][1]", row[1])))
    return tuple(rows)


def _strategies(key, value):
    if isinstance(value, str):
        value = [s.strip() for s in value.split(",") if s.strip()]
    if not isinstance(value, list) or not value:
        raise ConfigError(key, "expected a non-empty list of strategy names")
    for s in value:
        if s not in STRATEGIES:
            raise ConfigError(key, f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
    return tuple(value)


def _build(section, cls, values):
    try:
        return cls(**values)
    except (ParameterError, ValueError) as exc:
        raise ConfigError(section, str(exc)) from exc


def config_from_dict(data: dict) -> Config:
    """Validate a parsed configuration mapping and fill in defaults."""
    known = {"vehicle", "admm", "dp", "problem", "run"}
    for name, value in data.items():
        if name not in known:
            raise ConfigError(name, "unknown section")
        if not isinstance(value, dict):
            raise ConfigError(name, "expected a table")
    vehicle = _build("vehicle", VehicleParams, _coerce("vehicle", VehicleParams, data.get("vehicle", {}), {
        "engine_loss_map": _loss_map, "motor_loss_map": _loss_map, "gear_table": _gear_table}))
    pen = _build("admm", Penalties, _coerce("admm", Penalties, data.get("admm", {})))
    grids = _build("dp", DpGrids, _coerce("dp", DpGrids, data.get("dp", {})))
    run_values = {}
    for section, keys in (("problem", PROBLEM_KEYS), ("run", RUN_KEYS)):
        table = data.get(section, {})
        for name in table:
            if name not in keys:
                raise ConfigError(f"{section}.{name}", "unknown key")
        run_values.update(_coerce(section, RunOptions, table, {"strategies": _strategies}))
    run = RunOptions(**run_values)
    if not 0.0 <= run.soc_min_frac <= run.soc_init_frac <= run.soc_max_frac <= 1.0:
        raise ConfigError("problem", "SOC fractions must satisfy 0 <= soc_min_frac <= soc_init_frac <= soc_max_frac <= 1")
    if run.kd < 0:
        raise ConfigError("problem.kd", "must be >= 0")
    if run.linear_solves not in ("dense", "banded"):
        raise ConfigError("run.linear_solves", f"expected 'dense' or 'banded', got {run.linear_solves!r}")
    if not run.fuel_energy_density_J_per_g > 0:
        raise ConfigError("run.fuel_energy_density_J_per_g", "must be > 0")
    return Config(vehicle, pen, grids, run)


def load_config(path=None) -> Config:
    """Read a TOML configuration file.

    Parameters
    ----------
    path : path-like, optional
        Config file; falls back to ``$PHEV_EMS_CONFIG`` and then to the
        built-in defaults.

    Returns
    -------
    Config
        Unpacks as ``vehicle, penalties, grids, run_options``.

    Raises
    ------
    ConfigError
        On syntax errors, unknown keys, wrong value types or parameter
        bundles that fail validation.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return config_from_dict({})
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"{path}: {exc}") from exc
    return config_from_dict(data)
