"""Reference strategies: charge-depleting/charge-sustaining, DP and an enumeration oracle.

All three return a :class:`StrategyResult`, which has the same fields as the
ADMM :class:`~phev_ems.admm.Solution` trajectory so reports can treat every
strategy alike.

The DP works on the nodes ``E_min + j * dE`` of a uniform SOC grid, with the
previous engine state as a second state coordinate because the switching
cost couples neighbouring steps. Per step the controls are

* ``sigma = 0`` with ``P_b = g_k(P_drv,k)`` (engine off), and
* ``sigma = 1`` (not on clutch-open steps) with ``P_b`` on a uniform grid
  over ``[g + gamma, g + delta]`` including both end points.

Two transition models are available. ``"nearest"`` snaps the next SOC to
its closest node, so the DP is exact on a finite graph and can be checked
against :func:`enumerate_oracle`. ``"linear"`` interpolates the value
function between nodes and reconstructs the controls by a forward pass on
the continuous SOC, which is the mode for quality runs: with 1 s steps the
per-step energy is often smaller than half a SOC bucket, and snapping would
round most electric driving away.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import metrics
from .metrics import Trajectory
from .powertrain import EnergyProblem, InfeasibleProblemError


@dataclass(frozen=True)
class DpGrids:
    """Discretization of the DP.

    Parameters
    ----------
    soc_step_frac : float
        SOC node spacing as a fraction of battery capacity.
    power_step_frac : float
        Battery power spacing as a fraction of each step's feasible
        engine-on range; ``round(1 / power_step_frac) + 1`` points.
    interpolation : {"linear", "nearest"}
        Value-function interpolation between SOC nodes.
    """

    soc_step_frac: float = 0.001
    power_step_frac: float = 0.01
    interpolation: str = "linear"

    def __post_init__(self):
        for name in ("soc_step_frac", "power_step_frac"):
            v = getattr(self, name)
            if not 0.0 < v <= 0.5:
                raise ValueError(f"{name} must lie in (0, 0.5], got {v}")
        if self.interpolation not in ("linear", "nearest"):
            raise ValueError(f"interpolation must be 'linear' or 'nearest', got {self.interpolation!r}")

    @property
    def n_power(self) -> int:
        return int(round(1.0 / self.power_step_frac)) + 1


@dataclass
class StrategyResult(Trajectory):
    """Trajectory of a reference strategy.

    ``model_cost`` is the optimal value on the strategy's own discrete model
    (DP and enumeration only); for the DP in linear mode it differs from
    :attr:`objective_J`, which is always evaluated on the re-simulated
    controls.
    """

    strategy: str = ""
    model_cost: float | None = None


# ---------------------------------------------------------------- CDCS

def cdcs(problem: EnergyProblem) -> StrategyResult:
    """Charge-depleting then charge-sustaining heuristic.

    The engine stays off until the first step whose all-electric execution
    would take the SOC below its lower bound. From that step on the engine
    runs on every step with a closed clutch, the battery supplies positive
    demand only with the energy it holds above the lower bound, and
    negative demand still recharges it. Regenerative energy that would push
    the SOC above its upper bound is left to the friction brake
    (``info["extra_brake_J"]``).

    On braking and clutch-open steps the battery power is fixed at
    ``g(P_drv)``; where that drains the battery at the lower bound the SOC
    rides below it, and the largest shortfall is ``info["soc_shortfall_J"]``.

    Raises
    ------
    InfeasibleProblemError
        If, in sustaining mode, the engine cannot cover the demand of a
        power-split step without drawing the battery below its lower bound.
    """
    t0 = time.perf_counter()
    pr = problem
    n = pr.n_steps
    dt = pr.dt_s
    p_b = np.empty(n)
    sigma = np.zeros(n)
    e = pr.soc_init_J
    sustaining = False
    extra_brake = 0.0
    tol = metrics.terminal_tolerance(pr)
    for k in range(n):
        g = pr.g_of_pdrv_W[k]
        if not sustaining and e - g * dt < pr.soc_min_J:
            sustaining = True
        if not sustaining or pr.in_clutch[k]:
            p = g
        else:
            sigma[k] = 1.0
            if pr.in_split[k]:
                # battery only spends what it holds above the lower bound
                p = min(max((e - pr.soc_min_J) / dt, pr.pb_min_W[k]), g)
                if e - p * dt < pr.soc_min_J - tol:
                    raise InfeasibleProblemError(
                        f"step {k}: engine cannot cover the demand in charge-sustaining mode", step=k)
            else:
                p = g
        if e - p * dt > pr.soc_max_J:
            q = (e - pr.soc_max_J) / dt
            extra_brake += (q - p) * dt
            p = q
        p_b[k] = p
        e = e - p * dt
    traj = metrics.make_trajectory(pr, p_b, sigma)
    res = StrategyResult(**vars(traj), strategy="cdcs")
    res.info["extra_brake_J"] = float(extra_brake)
    res.info["sustain_start"] = int(np.argmax(sigma > 0)) if np.any(sigma > 0) else None
    res.info["soc_shortfall_J"] = float(max(0.0, pr.soc_min_J - res.soc_J[1:].min()))
    res.wall_time_s = time.perf_counter() - t0
    return res


# ------------------------------------------------------------------ DP

@dataclass
class _Stage:
    """Controls available at one step: engine-on powers and their fuel terms."""

    p_on: np.ndarray  # engine-on battery powers (empty on clutch-open steps)
    fuel_on: np.ndarray
    p_off: float
    fuel_off: float = 0.0


def _stages(problem: EnergyProblem, grids: DpGrids) -> list[_Stage]:
    pr = problem
    n_p = grids.n_power
    out = []
    frac = np.linspace(0.0, 1.0, n_p)
    for k in range(pr.n_steps):
        g = pr.g_of_pdrv_W[k]
        if pr.in_clutch[k]:
            out.append(_Stage(np.empty(0), np.empty(0), g))
        elif pr.in_brake[k]:
            out.append(_Stage(np.array([g]), np.array([pr.idle_fuel_W[k] * pr.dt_s]), g))
        else:
            lo, hi = pr.pb_min_W[k], pr.pb_max_W[k]
            p = lo + (hi - lo) * frac
            p[-1] = hi
            p_eng = pr.demand_W[k] - pr.g_inv(p, k)
            fuel = pr.f(p_eng, k) * pr.dt_s
            out.append(_Stage(p, fuel, g))
    return out


def _switch_cost(kd, sigma, sigma_prev):
    return 0.5 * kd * (sigma - sigma_prev) ** 2


class _Grid:
    """SOC node geometry plus, for linear mode, the exact feasible SOC interval per step."""

    def __init__(self, problem: EnergyProblem, grids: DpGrids):
        self.lo = problem.soc_min_J
        self.step = grids.soc_step_frac * problem.capacity_J
        span = (problem.soc_max_J - problem.soc_min_J) / self.step
        self.m = int(np.floor(span + 1e-9))  # nodes 0..m
        self.dt = problem.dt_s
        self.nearest = grids.interpolation == "nearest"
        on = np.where(problem.in_clutch, 0.0, 1.0)
        L, U = metrics.reachable_soc(problem, *metrics.control_bounds(problem, on))
        self.feas_lo = self.position(np.maximum(L, problem.soc_min_J))
        self.feas_hi = self.position(np.minimum(U, problem.soc_max_J))

    def position(self, soc):
        return (np.asarray(soc, dtype=float) - self.lo) / self.step

    def next_position(self, pos, p):
        return pos - p * self.dt / self.step

    def lookup(self, values, pos, k):
        """Value of the step-``k`` table at fractional node positions.

        Nearest mode snaps to the closest node (``inf`` off the grid). Linear
        mode interpolates between nodes inside the exact feasible interval
        of step ``k`` and extrapolates from the two outermost finite nodes
        where a neighbouring node is infeasible, so the feasible region is
        not eroded by one node per step; outside the interval it is ``inf``.
        """
        pos = np.asarray(pos, dtype=float)
        m = self.m
        out = np.full(pos.shape, np.inf)
        if self.nearest:
            j = np.rint(pos)
            ok = (j >= 0) & (j <= m)
            out[ok] = values[j[ok].astype(int)]
            return out
        tol = 1e-9
        ok = (pos >= self.feas_lo[k] - tol) & (pos <= self.feas_hi[k] + tol)
        if not np.any(ok):
            return out
        finite = np.flatnonzero(np.isfinite(values))
        if finite.size == 0:
            return out
        q = pos[ok]
        if finite.size == 1:
            out[ok] = values[finite[0]]
            return out
        jlo, jhi = finite[0], finite[-1]
        # interpolate on the segment containing q, with the end segments of
        # the finite range extended beyond it
        j = np.clip(np.floor(q).astype(int), jlo, jhi - 1)
        v0 = values[j]
        v1 = values[j + 1]
        w = q - j
        with np.errstate(invalid="ignore"):
            val = v0 + w * (v1 - v0)
        val = np.where(w == 0.0, v0, np.where(w == 1.0, v1, val))
        out[ok] = val
        return out


def _backward(problem, stages, grid: _Grid):
    """Value tables ``V[k][s_prev, node]`` for ``k = 0..N`` (``V[N] = 0``)."""
    n = problem.n_steps
    kd = problem.kd
    nodes = np.arange(grid.m + 1, dtype=float)
    V = np.empty((n + 1, 2, grid.m + 1))
    V[n] = 0.0
    for k in range(n - 1, -1, -1):
        st = stages[k]
        nxt = V[k + 1]
        cont_off = grid.lookup(nxt[0], grid.next_position(nodes, st.p_off), k + 1)
        if st.p_on.size:
            cont_on = grid.lookup(nxt[1], grid.next_position(nodes[:, None], st.p_on[None, :]), k + 1)
        for sp in (0, 1):
            off = _stage_plus(st.fuel_off, _switch_cost(kd, 0.0, sp), cont_off)
            if st.p_on.size:
                on = _stage_plus(st.fuel_on[None, :], _switch_cost(kd, 1.0, sp), cont_on).min(axis=1)
                V[k, sp] = np.minimum(off, on)
            else:
                V[k, sp] = off
    return V


def _stage_plus(fuel, switch, cont):
    # (fuel + switch) + continuation: the association the enumeration oracle uses too
    return (fuel + switch) + cont


def _choose(problem, stage: _Stage, grid: _Grid, V_next, k_next, pos, sp):
    """Best control from fractional position ``pos`` with previous engine state ``sp``."""
    kd = problem.kd
    cands = [(_stage_plus(stage.fuel_off, _switch_cost(kd, 0.0, sp),
                          grid.lookup(V_next[0], grid.next_position(pos, stage.p_off), k_next)), 0.0, stage.p_off)]
    if stage.p_on.size:
        cont = grid.lookup(V_next[1], grid.next_position(pos, stage.p_on), k_next)
        tot = _stage_plus(stage.fuel_on, _switch_cost(kd, 1.0, sp), cont)
        i = int(np.argmin(tot))
        cands.append((float(tot[i]), 1.0, float(stage.p_on[i])))
    best = min(cands, key=lambda c: c[0])
    return best


def dp_solve(problem: EnergyProblem, grids: DpGrids | None = None) -> StrategyResult:
    """Dynamic programming over (SOC node, previous engine state).

    The backward pass tabulates the optimal cost-to-go; the forward pass
    follows the greedy policy on it. In ``"nearest"`` mode the forward pass
    moves on the snapped nodes (``info["node_soc_J"]``) while the returned
    SOC is re-simulated from the chosen powers; in ``"linear"`` mode it runs
    on the continuous SOC, so the returned trajectory respects the SOC
    bounds.

    Raises
    ------
    InfeasibleProblemError
        If no control sequence on the grid satisfies the SOC bounds.
    """
    grids = grids or DpGrids()
    t0 = time.perf_counter()
    pr = problem
    grid = _Grid(pr, grids)
    stages = _stages(pr, grids)
    V = _backward(pr, stages, grid)
    pos = float(grid.position(pr.soc_init_J))
    if grid.nearest:
        pos = float(np.rint(pos))
    model_cost = float(grid.lookup(V[0, 0], np.array([pos]), 0)[0])
    if not np.isfinite(model_cost):
        raise InfeasibleProblemError("no SOC-feasible control sequence on the DP grid")
    n = pr.n_steps
    p_b = np.empty(n)
    sigma = np.zeros(n)
    node_soc = np.empty(n + 1)
    node_soc[0] = grid.lo + pos * grid.step
    sp = 0.0
    for k in range(n):
        cost, s, p = _choose(pr, stages[k], grid, V[k + 1], k + 1, np.array(pos), int(sp))
        if not np.isfinite(cost):
            raise InfeasibleProblemError("DP forward pass left the feasible region", step=k)
        p_b[k], sigma[k] = p, s
        pos = float(grid.next_position(pos, p))
        if grid.nearest:
            pos = float(np.rint(pos))
        node_soc[k + 1] = grid.lo + pos * grid.step
        sp = s
    traj = metrics.make_trajectory(pr, p_b, sigma)
    res = StrategyResult(**vars(traj), strategy="dp", model_cost=model_cost)
    res.info.update(soc_nodes=grid.m + 1, power_points=grids.n_power, interpolation=grids.interpolation)
    if grid.nearest:
        res.info["node_soc_J"] = node_soc
    res.wall_time_s = time.perf_counter() - t0
    return res


# ------------------------------------------------------------ oracle

MAX_ENUMERATION = 10_000_000


def enumerate_oracle(problem: EnergyProblem, grids: DpGrids | None = None,
                     chunk: int = 200_000) -> StrategyResult:
    """Exhaustive minimum over every discretized control sequence.

    Uses the DP's control sets, stage costs and SOC transition (nearest-node
    snapping in ``"nearest"`` mode), summing stage costs from the last step
    backwards like the DP does, so the two agree exactly.

    Raises
    ------
    ValueError
        If ``N > 8`` or there are more than ``MAX_ENUMERATION`` sequences.
    InfeasibleProblemError
        If every sequence violates the SOC bounds.
    """
    grids = grids or DpGrids(interpolation="nearest")
    t0 = time.perf_counter()
    pr = problem
    n = pr.n_steps
    if n > 8:
        raise ValueError(f"enumeration oracle supports at most 8 steps, got {n}")
    stages = _stages(pr, grids)
    # per-step options as (sigma, p, fuel)
    opts = []
    for st in stages:
        s = np.concatenate([[0.0], np.ones(st.p_on.size)])
        p = np.concatenate([[st.p_off], st.p_on])
        f = np.concatenate([[st.fuel_off], st.fuel_on])
        opts.append((s, p, f))
    sizes = [len(o[0]) for o in opts]
    total = int(np.prod(sizes, dtype=np.int64)) if n else 1
    if total > MAX_ENUMERATION:
        raise ValueError(f"{total} control sequences exceed the enumeration limit {MAX_ENUMERATION}")
    grid = _Grid(pr, grids)
    pos0 = float(grid.position(pr.soc_init_J))
    if grid.nearest:
        pos0 = float(np.rint(pos0))
    kd = pr.kd
    best_cost, best_idx = np.inf, None
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        idx = np.unravel_index(flat, sizes) if n else ()
        pos = np.full(flat.shape, pos0)
        ok = np.ones(flat.shape, dtype=bool)
        sp = np.zeros(flat.shape)
        stage_cost = np.empty((n, flat.size))
        for k in range(n):
            s, p, f = (a[idx[k]] for a in opts[k])
            stage_cost[k] = f + _switch_cost(kd, s, sp)
            pos = grid.next_position(pos, p)
            if grid.nearest:
                pos = np.rint(pos)
                ok &= (pos >= 0) & (pos <= grid.m)
            else:
                ok &= (pos >= -1e-9) & (pos <= grid.m + 1e-9)
            sp = s
        acc = np.zeros(flat.size)
        for k in range(n - 1, -1, -1):
            acc = stage_cost[k] + acc
        acc[~ok] = np.inf
        i = int(np.argmin(acc))
        if acc[i] < best_cost:
            best_cost, best_idx = float(acc[i]), flat[i]
    if not np.isfinite(best_cost):
        raise InfeasibleProblemError("no SOC-feasible control sequence on the grid")
    choice = np.unravel_index(best_idx, sizes) if n else ()
    sigma = np.array([opts[k][0][choice[k]] for k in range(n)])
    p_b = np.array([opts[k][1][choice[k]] for k in range(n)])
    traj = metrics.make_trajectory(pr, p_b, sigma)
    res = StrategyResult(**vars(traj), strategy="enumeration", model_cost=best_cost)
    res.info["sequences"] = total
    res.wall_time_s = time.perf_counter() - t0
    return res
