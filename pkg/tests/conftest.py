"""Shared instance generators and the acceptance-summary hook."""

from __future__ import annotations

import numpy as np
import pytest

from phev_ems.cycles import DriveCycle
from phev_ems.params import VehicleParams
from phev_ems.powertrain import InfeasibleProblemError, build_problem

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, label: str, passed: bool, detail: str = "") -> bool:
    """Store and print one acceptance verdict line; returns ``passed``."""
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
    _ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_cycle(rng: np.random.Generator, n: int, v_range=(5.0, 20.0), grade=(-0.01, 0.03)) -> DriveCycle:
    """Smooth random-acceleration cycle with a constant grade, ``n`` steps long."""
    a = np.clip(np.cumsum(rng.normal(0.0, 0.3, n)), -1.0, 1.0)
    v0 = float(rng.uniform(8.0, 16.0))
    v = np.clip(v0 + np.concatenate([[0.0], np.cumsum(a)]), *v_range)
    th = np.full(n + 1, float(rng.uniform(*grade)))
    return DriveCycle(v, th)


def tiny_problems(count: int, n_range, soc=(0.4, 0.402, 0.404), seed: int = 0, need_engine: bool = True, kd=1e4):
    """Deterministic list of ``count`` small feasible problems.

    Draws are rejected if the build fails, if no admissible power sequence
    meets the SOC bounds or (with ``need_engine``) if all-electric driving is
    already feasible.
    """
    from phev_ems import admm, metrics

    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        cyc = random_cycle(rng, n)
        try:
            p = build_problem(cyc, VehicleParams(), soc_min_frac=soc[0], soc_init_frac=soc[1],
                              soc_max_frac=soc[2], kd=kd)
        except InfeasibleProblemError:
            continue
        if not metrics.is_soc_feasible(p, p.pb_min_W, p.pb_max_W):
            continue
        if need_engine and admm.engine_off_trajectory(p) is not None:
            continue
        out.append(p)
    return out


@pytest.fixture(scope="session")
def params():
    return VehicleParams()
