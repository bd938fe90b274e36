"""Objective evaluation and trajectory bookkeeping shared by all strategies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .powertrain import EnergyProblem, InfeasibleProblemError


def simulate_soc(problem: EnergyProblem, p_b) -> np.ndarray:
    """SOC trajectory ``E[0..N]`` from Euler integration ``E[k+1] = E[k] - P_b[k] dt``."""
    p_b = np.asarray(p_b, dtype=float)
    # sequential subtraction, so soc[k + 1] == soc[k] - p_b[k] * dt holds exactly
    return np.subtract.accumulate(np.concatenate([[problem.soc_init_J], p_b * problem.dt_s]))


def fuel_stage_terms(problem: EnergyProblem, p_b, sigma) -> np.ndarray:
    """Per-step fuel power of the objective (W).

    Power-split steps contribute ``f(P_drv - g^-1(P_b)) + (sigma - 1) f(0)``,
    engine-decision steps ``sigma f(0)``; clutch-open steps contribute nothing.
    """
    p_b = np.asarray(p_b, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    out = np.zeros(problem.n_steps)
    idle = problem.idle_fuel_W
    s = problem.in_split
    if np.any(s):
        p_eng = problem.demand_W[s] - problem.g_inv(p_b[s], s)
        out[s] = problem.f(p_eng, s) + (sigma[s] - 1.0) * idle[s]
        # engine off pins P_b = g(P_drv), where the term is zero up to roundoff
        out[s & (sigma == 0)] = 0.0
    b = problem.in_brake
    out[b] = sigma[b] * idle[b]
    return out


def driveability_cost(kd: float, sigma) -> float:
    """``kd/2 * ||Psi^-1 sigma||^2`` with the convention ``sigma[-1] = 0``."""
    d = np.diff(np.asarray(sigma, dtype=float), prepend=0.0)
    return 0.5 * kd * float(d @ d)


def switch_count(sigma) -> int:
    sigma = np.rint(np.asarray(sigma, dtype=float)).astype(int)
    return int(np.count_nonzero(np.diff(sigma, prepend=0)))


def objective(problem: EnergyProblem, p_b, sigma) -> float:
    """Full objective: integrated fuel terms plus the driveability cost."""
    fuel = float(np.sum(fuel_stage_terms(problem, p_b, sigma)) * problem.dt_s)
    return fuel + driveability_cost(problem.kd, sigma)


def control_bounds(problem: EnergyProblem, sigma):
    """Battery power interval ``[g + sigma gamma, g + sigma delta]`` for each step."""
    sigma = np.asarray(sigma, dtype=float)
    g = problem.g_of_pdrv_W
    return g + sigma * problem.gamma_W, g + sigma * problem.delta_W


def min_sigma_for_power(problem: EnergyProblem, p_b) -> np.ndarray:
    """Smallest ``sigma`` in ``[0, 1]`` whose battery power interval contains ``p_b``."""
    dev = np.asarray(p_b, dtype=float) - problem.g_of_pdrv_W
    gam, dlt = problem.gamma_W, problem.delta_W
    out = np.zeros_like(dev)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = (dev > 0) & (dlt > 0)
        out[up] = dev[up] / dlt[up]
        dn = (dev < 0) & (gam < 0)
        out[dn] = dev[dn] / gam[dn]
    return np.clip(out, 0.0, 1.0)


def reachable_soc(problem: EnergyProblem, lo, hi):
    """Backward pass for the SOC values from which the rest of the horizon is feasible.

    Returns ``(L, U)`` of length ``N + 1``: a trajectory at ``E[k]`` can be
    completed within the SOC bounds using controls in ``[lo, hi]`` iff
    ``L[k] <= E[k] <= U[k]``. Empty sets show up as ``L > U``.
    """
    n = problem.n_steps
    L = np.empty(n + 1)
    U = np.empty(n + 1)
    L[n], U[n] = problem.soc_min_J, problem.soc_max_J
    dt = problem.dt_s
    for k in range(n - 1, -1, -1):
        L[k] = max(problem.soc_min_J, L[k + 1] + lo[k] * dt)
        U[k] = min(problem.soc_max_J, U[k + 1] + hi[k] * dt)
    # E[0] is the given initial SOC and need not honour the bounds itself
    L[0] = L[1] + lo[0] * dt
    U[0] = U[1] + hi[0] * dt
    return L, U


def is_soc_feasible(problem: EnergyProblem, lo, hi) -> bool:
    L, U = reachable_soc(problem, lo, hi)
    return bool(np.all(L <= U) and L[0] <= problem.soc_init_J <= U[0])


def repair_soc(problem: EnergyProblem, p_b, sigma):
    """Closest-in-sequence feasible battery power for a fixed engine schedule.

    Each step takes ``p_b[k]`` clipped to its ``sigma``-consistent bounds and
    to the interval that keeps the remaining horizon feasible, so the output
    satisfies every constraint exactly and equals ``p_b`` wherever ``p_b``
    already does.

    Raises
    ------
    InfeasibleProblemError
        If no feasible trajectory exists for ``sigma``.
    """
    lo, hi = control_bounds(problem, sigma)
    L, U = reachable_soc(problem, lo, hi)
    if not (np.all(L <= U) and L[0] <= problem.soc_init_J <= U[0]):
        bad = np.flatnonzero(L > U)
        raise InfeasibleProblemError(
            "no SOC-feasible battery power for this engine schedule",
            step=int(bad[0]) if bad.size else 0,
        )
    out = np.clip(np.asarray(p_b, dtype=float), lo, hi)
    e = problem.soc_init_J
    dt = problem.dt_s
    for k in range(problem.n_steps):
        # E[k+1] = e - p dt must land in [L[k+1], U[k+1]]
        p_lo = max(lo[k], (e - U[k + 1]) / dt)
        p_hi = min(hi[k], (e - L[k + 1]) / dt)
        p = min(max(out[k], p_lo), p_hi)
        out[k] = p
        e = e - p * dt
    return out


def terminal_tolerance(problem: EnergyProblem) -> float:
    return 1e-6 * max(problem.capacity_J, 1.0)


@dataclass
class Trajectory:
    """Controls and derived quantities of one strategy run.

    ``fuel_cum_J`` is the running integral of the fuel stage terms (fuel
    power, so energy in J); the driveability term is kept separate in
    ``driveability_J``.
    """

    p_b_W: np.ndarray
    sigma: np.ndarray
    soc_J: np.ndarray
    fuel_cum_J: np.ndarray
    driveability_J: float
    switch_count: int
    wall_time_s: float = 0.0
    converged: bool = True
    info: dict = field(default_factory=dict)

    @property
    def fuel_J(self) -> float:
        return float(self.fuel_cum_J[-1]) if len(self.fuel_cum_J) else 0.0

    @property
    def objective_J(self) -> float:
        return self.fuel_J + self.driveability_J

    def fuel_g(self, energy_density_J_per_g: float = 43e3) -> float:
        return self.fuel_J / energy_density_J_per_g


def make_trajectory(problem: EnergyProblem, p_b, sigma, **kw) -> Trajectory:
    p_b = np.asarray(p_b, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    terms = fuel_stage_terms(problem, p_b, sigma) * problem.dt_s
    return Trajectory(
        p_b_W=p_b,
        sigma=sigma,
        soc_J=simulate_soc(problem, p_b),
        fuel_cum_J=np.cumsum(terms),
        driveability_J=driveability_cost(problem.kd, sigma),
        switch_count=switch_count(sigma) if np.all((sigma == 0) | (sigma == 1)) else -1,
        **kw,
    )


def constraint_violation(problem: EnergyProblem, traj: Trajectory) -> dict:
    """Largest violation of each constraint family (0 when satisfied)."""
    lo, hi = control_bounds(problem, traj.sigma)
    soc = traj.soc_J[1:]
    return {
        "soc_low": float(max(0.0, np.max(problem.soc_min_J - soc, initial=0.0))),
        "soc_high": float(max(0.0, np.max(soc - problem.soc_max_J, initial=0.0))),
        "power_low": float(max(0.0, np.max(lo - traj.p_b_W, initial=0.0))),
        "power_high": float(max(0.0, np.max(traj.p_b_W - hi, initial=0.0))),
        "sigma_clutch": float(np.max(np.abs(traj.sigma[problem.in_clutch]), initial=0.0)),
    }
