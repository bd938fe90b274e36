"""Two-phase ADMM for the power-split and engine on/off problem.

Phase one solves the convex relaxation ``sigma in [0, 1]``; phase two
restarts from its iterates with ``sigma in {0, 1}``. Each iteration
minimizes the augmented Lagrangian block by block in the order
``kappa, P_b, E, (eta, sigma), zeta`` and then takes a dual step on the
four consensus constraints::

    E = Phi E0 - Psi zeta,   P_b = zeta,   P_b = eta,   kappa = sigma

Example
-------
>>> from phev_ems import cycles, params, powertrain, admm
>>> prob = powertrain.build_problem(cycles.preset_cycle("suburban", 0), params.VehicleParams())
>>> sol = admm.solve(prob)                                   # doctest: +SKIP
>>> sol.converged, sol.fuel_J, sol.switch_count              # doctest: +SKIP
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import metrics
from .metrics import Trajectory
from .operators import LinearSolves, psi, psi_T
from .powertrain import EnergyProblem, InfeasibleProblemError, battery_inverse_derivatives

log = logging.getLogger(__name__)


class Phase(str, Enum):
    CONVEX = "convex"
    BINARY = "binary"


@dataclass(frozen=True)
class Penalties:
    rho1: float = 8.86e-9
    rho2: float = 2.34e-4
    rho3: float = 2.34e-4
    rho4: float = 2e3
    epsilon: float = 7e4
    max_iters_convex: int = 5000
    max_iters_binary: int = 5000
    newton_tol: float = 1e-6
    newton_max_iters: int = 50
    backtrack_shrink: float = 0.5
    backtrack_slope: float = 1e-4

    def __post_init__(self):
        for name in ("rho1", "rho2", "rho3", "rho4", "epsilon", "newton_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("max_iters_convex", "max_iters_binary", "newton_max_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.backtrack_shrink < 1:
            raise ValueError("backtrack_shrink must lie in (0, 1)")
        if not 0 < self.backtrack_slope < 0.5:
            raise ValueError("backtrack_slope must lie in (0, 0.5)")


@dataclass
class AdmmState:
    kappa: np.ndarray
    p_b: np.ndarray
    soc: np.ndarray  # E[1..N]
    sigma: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    lam1: np.ndarray
    lam2: np.ndarray
    lam3: np.ndarray
    lam4: np.ndarray
    phase: Phase = Phase.CONVEX
    iter: int = 0

    def copy(self) -> "AdmmState":
        return replace(self, **{k: getattr(self, k).copy() for k in
                                ("kappa", "p_b", "soc", "sigma", "eta", "zeta", "lam1", "lam2", "lam3", "lam4")})


@dataclass(frozen=True)
class Residuals:
    primal_norm: float
    dual_norm: float

    @property
    def worst(self) -> float:
        return max(self.primal_norm, self.dual_norm)


@dataclass
class Solution(Trajectory):
    iters_convex: int = 0
    iters_binary: int = 0
    residuals: Residuals | None = None
    relaxed: Trajectory | None = None
    history: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.iters_convex + self.iters_binary


class AdmmSolver:
    """ADMM iteration for one :class:`EnergyProblem`.

    The linear solves are factorized once at construction. ``linear_solves``
    selects the dense precomputed inverses or the banded fast path.
    """

    def __init__(self, problem: EnergyProblem, pen: Penalties | None = None, linear_solves: str = "dense"):
        if problem.dt_s != 1.0:
            raise ValueError("ADMM assumes a 1 s sampling interval")
        self.problem = problem
        self.pen = pen or Penalties()
        p = self.pen
        n = problem.n_steps
        self.solves = LinearSolves(n, problem.kd, p.rho1, p.rho2, p.rho4, method=linear_solves)
        self.split = np.flatnonzero(problem.in_split)
        self.decide = np.flatnonzero(~problem.in_clutch)
        self.clutch = np.flatnonzero(problem.in_clutch)
        self.other = np.flatnonzero(~problem.in_split)
        self._prepare_newton()

    # ------------------------------------------------------------------ setup

    def _prepare_newton(self):
        pr = self.problem
        s = self.split
        V, R = pr.voltage_V, pr.resistance_ohm
        self._pd = pr.demand_W[s]
        self._alpha = pr.alpha[s]
        self._beta = pr.beta[s]
        b2, b1, b0 = self._beta.T
        a2, a1, _ = self._alpha.T
        # g^-1 is defined from the vertex of h up to the real-valuedness limit;
        # f must stay non-decreasing, i.e. P_eng above its vertex
        h_vertex = b0 - b1**2 / (4.0 * b2)
        lo = 2.0 * h_vertex / (1.0 + np.sqrt(1.0 - 4.0 * R * h_vertex / V**2))
        x_caps = [np.full(len(s), np.inf)]
        if R > 0:
            hmax = V**2 / (4.0 * R)
            x_caps.append((-b1 + np.sqrt(b1**2 - 4.0 * b2 * (b0 - hmax))) / (2.0 * b2))
        with np.errstate(divide="ignore"):
            x_caps.append(np.where(a2 > 0, self._pd + a1 / (2.0 * a2), np.inf))
        x_hi = np.minimum.reduce(x_caps)
        xh = np.where(np.isfinite(x_hi), x_hi, 0.0)
        h_hi = (b2 * xh + b1) * xh + b0
        g_hi = 2.0 * h_hi / (1.0 + np.sqrt(np.maximum(0.0, 1.0 - 4.0 * R * h_hi / V**2)))
        hi = np.where(np.isfinite(x_hi), g_hi, pr.pb_max_W[s] + 1e7)
        width = np.maximum(1.0, np.abs(hi - lo))
        self._dom_lo = lo + 1e-9 * width
        self._dom_hi = hi - 1e-9 * width

    # --------------------------------------------------------------- updates

    def initialize(self) -> AdmmState:
        pr = self.problem
        n = pr.n_steps
        g = pr.g_of_pdrv_W.copy()
        soc = np.clip(pr.soc_init_J - psi(g), pr.soc_min_J, pr.soc_max_J)
        z = np.zeros(n)
        return AdmmState(kappa=z.copy(), p_b=g.copy(), soc=soc, sigma=z.copy(), eta=g.copy(), zeta=g.copy(),
                         lam1=z.copy(), lam2=z.copy(), lam3=z.copy(), lam4=z.copy())

    def update_kappa(self, st: AdmmState) -> np.ndarray:
        return self.solves.kappa(st.sigma - st.lam4)

    def _fuel_derivs(self, P):
        x, dx, d2x = battery_inverse_derivatives(P, self._beta, self.problem.voltage_V, self.problem.resistance_ohm)
        a2, a1, a0 = self._alpha.T
        y = self._pd - x
        fp = 2.0 * a2 * y + a1
        phi = (a2 * y + a1) * y + a0
        return phi, -fp * dx, 2.0 * a2 * dx**2 - fp * d2x

    def newton_pb(self, zc, ec, p0):
        """Minimize ``phi(P) + rho2/2 (P - zc)^2 + rho3/2 (P - ec)^2`` for every power-split step.

        Damped Newton with Armijo backtracking inside a shrinking bracket of
        the (monotone) gradient; steps that fail the line search fall back to
        bisection. Returns ``(P, gradient, iterations)``.
        """
        pen = self.pen
        r2, r3 = pen.rho2, pen.rho3
        a, b = self._dom_lo, self._dom_hi
        P = np.clip(p0, a, b)
        blo, bhi = a.copy(), b.copy()
        tol = pen.newton_tol * (r2 + r3)
        c = pen.backtrack_slope

        def F(P, phi):
            return phi + 0.5 * r2 * (P - zc) ** 2 + 0.5 * r3 * (P - ec) ** 2

        it = 0
        for it in range(1, pen.newton_max_iters + 1):
            phi, dphi, d2phi = self._fuel_derivs(P)
            G = dphi + r2 * (P - zc) + r3 * (P - ec)
            H = d2phi + r2 + r3
            done = (np.abs(G) <= tol) | ((P >= b) & (G < 0)) | ((P <= a) & (G > 0))
            if np.all(done):
                return P, G, it - 1
            blo = np.where(G < 0, np.maximum(blo, P), blo)
            bhi = np.where(G > 0, np.minimum(bhi, P), bhi)
            F0 = F(P, phi)
            with np.errstate(invalid="ignore", divide="ignore"):
                d = np.where(np.isfinite(H) & (H > 0), -G / H, np.nan)
            t = np.ones_like(P)
            todo = ~done & np.isfinite(d)
            new = P.copy()
            for _ in range(40):
                if not np.any(todo):
                    break
                trial = P[todo] + t[todo] * d[todo]
                inside = (trial >= blo[todo]) & (trial <= bhi[todo])
                ok = np.zeros_like(inside)
                if np.any(inside):
                    sub = np.flatnonzero(todo)[inside]
                    phi_t, _, _ = self._fuel_derivs_at(trial[inside], sub)
                    Ft = phi_t + 0.5 * r2 * (trial[inside] - zc[sub]) ** 2 + 0.5 * r3 * (trial[inside] - ec[sub]) ** 2
                    slack = 1e-13 * (1.0 + np.abs(F0[sub]))
                    ok[inside] = Ft <= F0[sub] + c * t[sub] * G[sub] * d[sub] + slack
                idx = np.flatnonzero(todo)
                new[idx[ok]] = trial[ok]
                todo[idx[ok]] = False
                t[todo] *= pen.backtrack_shrink
            failed = ~done & ((new == P) | ~np.isfinite(d))
            new[failed] = 0.5 * (blo[failed] + bhi[failed])
            new[done] = P[done]
            P = new
        phi, dphi, _ = self._fuel_derivs(P)
        G = dphi + r2 * (P - zc) + r3 * (P - ec)
        return P, G, it

    def _fuel_derivs_at(self, P, idx):
        x, dx, d2x = battery_inverse_derivatives(P, self._beta[idx], self.problem.voltage_V,
                                                 self.problem.resistance_ohm)
        a2, a1, a0 = self._alpha[idx].T
        y = self._pd[idx] - x
        fp = 2.0 * a2 * y + a1
        return (a2 * y + a1) * y + a0, -fp * dx, 2.0 * a2 * dx**2 - fp * d2x

    def update_pb(self, st: AdmmState) -> np.ndarray:
        r2, r3 = self.pen.rho2, self.pen.rho3
        zc = st.zeta - st.lam2
        ec = st.eta - st.lam3
        out = (r2 * zc + r3 * ec) / (r2 + r3)
        s = self.split
        if s.size:
            out[s], _, _ = self.newton_pb(zc[s], ec[s], st.p_b[s])
        return out

    def update_soc(self, st: AdmmState) -> np.ndarray:
        pr = self.problem
        return np.clip(pr.soc_init_J - psi(st.zeta) + st.lam1, pr.soc_min_J, pr.soc_max_J)

    def update_eta_sigma(self, st: AdmmState, phase: Phase) -> tuple[np.ndarray, np.ndarray]:
        """Joint ``(eta, sigma)`` minimization using the updated ``P_b`` and ``kappa`` in ``st``."""
        pr = self.problem
        r3, r4 = self.pen.rho3, self.pen.rho4
        eta = pr.g_of_pdrv_W.copy()
        sigma = np.zeros(pr.n_steps)
        i = self.decide
        g = pr.g_of_pdrv_W[i]
        a = st.p_b[i] + st.lam3[i] - g  # eta target, shifted so the engine-off vertex sits at 0
        b = st.kappa[i] + st.lam4[i]  # sigma target
        c = pr.idle_fuel_W[i]
        gam, dlt = pr.gamma_W[i], pr.delta_W[i]

        def cost(s, e):
            return c * s + 0.5 * r3 * (e - a) ** 2 + 0.5 * r4 * (s - b) ** 2

        if phase is Phase.BINARY:
            e1 = np.clip(a, gam, dlt)
            on = cost(1.0, e1) < cost(0.0, 0.0)
            sigma[i] = on.astype(float)
            eta[i] = g + np.where(on, e1, 0.0)
            return eta, sigma

        s_free = b - c / r4
        cands_s = [s_free, np.zeros_like(a), np.ones_like(a), np.ones_like(a), np.ones_like(a)]
        cands_e = [a, np.zeros_like(a), dlt, gam, np.clip(a, gam, dlt)]
        for edge in (dlt, gam):
            s_edge = np.clip((r4 * b + r3 * edge * a - c) / (r4 + r3 * edge**2), 0.0, 1.0)
            cands_s.append(s_edge)
            cands_e.append(s_edge * edge)
        S = np.array(cands_s)
        E = np.array(cands_e)
        J = cost(S, E)
        tol = 1e-12 * (1.0 + np.abs(E))
        free_ok = (S[0] >= 0) & (S[0] <= 1) & (E[0] >= S[0] * gam - tol[0]) & (E[0] <= S[0] * dlt + tol[0])
        J[0] = np.where(free_ok, J[0], np.inf)
        best = np.argmin(J, axis=0)
        cols = np.arange(len(i))
        sigma[i] = S[best, cols]
        eta[i] = g + E[best, cols]
        return eta, sigma

    def update_eta_fixed(self, st: AdmmState, sigma) -> np.ndarray:
        lo, hi = metrics.control_bounds(self.problem, sigma)
        return np.clip(st.p_b + st.lam3, lo, hi)

    def update_zeta(self, st: AdmmState) -> np.ndarray:
        p = self.pen
        pr = self.problem
        rhs = p.rho2 * (st.p_b + st.lam2) + p.rho1 * psi_T(pr.soc_init_J - st.soc + st.lam1)
        return self.solves.zeta(rhs)

    def update_duals(self, st: AdmmState):
        pr = self.problem
        return (
            st.lam1 + (pr.soc_init_J - psi(st.zeta) - st.soc),
            st.lam2 + (st.p_b - st.zeta),
            st.lam3 + (st.p_b - st.eta),
            st.lam4 + (st.kappa - st.sigma),
        )

    def dual_residual_vector(self, prev: AdmmState, st: AdmmState) -> np.ndarray:
        """Dual residual ``s = A^T rho B (x+ - x)`` stacked as ``(kappa, P_b, E)`` rows.

        With ``x = (sigma, eta, zeta)`` and ``u = (kappa, P_b, E)`` the blocks
        are ``-rho4 dsigma``, ``-rho2 dzeta - rho3 deta`` and ``rho1 Psi dzeta``.
        """
        p = self.pen
        dz = st.zeta - prev.zeta
        return np.concatenate([
            -p.rho4 * (st.sigma - prev.sigma),
            -p.rho2 * dz - p.rho3 * (st.eta - prev.eta),
            p.rho1 * psi(dz),
        ])

    def residuals(self, prev: AdmmState, st: AdmmState) -> Residuals:
        """Norms of the primal residual ``r = Au + Bx - c`` and of the dual residual."""
        pr = self.problem
        r1 = pr.soc_init_J - psi(st.zeta) - st.soc
        r2 = st.p_b - st.zeta
        r3 = st.p_b - st.eta
        r4 = st.kappa - st.sigma
        primal = np.sqrt(r1 @ r1 + r2 @ r2 + r3 @ r3 + r4 @ r4)
        dual = np.linalg.norm(self.dual_residual_vector(prev, st))
        return Residuals(float(primal), float(dual))

    # ------------------------------------------------------------- iteration

    def step(self, st: AdmmState, phase: Phase, fixed_sigma=None) -> tuple[AdmmState, Residuals]:
        """One full ADMM iteration; returns the new state and its residuals."""
        prev = st
        st = st.copy()
        if fixed_sigma is None:
            st.kappa = self.update_kappa(st)
        st.p_b = self.update_pb(st)
        st.soc = self.update_soc(st)
        if fixed_sigma is None:
            st.eta, st.sigma = self.update_eta_sigma(st, phase)
        else:
            st.eta = self.update_eta_fixed(st, fixed_sigma)
        st.zeta = self.update_zeta(st)
        st.lam1, st.lam2, st.lam3, st.lam4 = self.update_duals(st)
        st.phase = phase
        st.iter = prev.iter + 1
        return st, self.residuals(prev, st)

    def run_phase(self, st: AdmmState, phase: Phase, max_iters: int, fixed_sigma=None, history=None):
        """Iterate until ``max(|r|, |s|) <= epsilon`` or ``max_iters``.

        Returns ``(state, residuals, iters, converged, stationary)``, where
        ``stationary`` counts the trailing iterations with unchanged ``sigma``.
        """
        eps = self.pen.epsilon
        res = None
        stationary = 0
        for j in range(1, max_iters + 1):
            new, res = self.step(st, phase, fixed_sigma)
            changes = int(np.count_nonzero(new.sigma != st.sigma))
            stationary = stationary + 1 if changes == 0 else 0
            if history is not None:
                history.append({
                    "iter": new.iter, "phase": phase.value, "primal_norm": res.primal_norm,
                    "dual_norm": res.dual_norm,
                    "objective": metrics.objective(self.problem, clip_to_domain(self, new.p_b), new.sigma),
                    "sigma_changes": changes,
                })
            st = new
            if res.worst <= eps:
                return st, res, j, True, stationary
        return st, res, max_iters, False, stationary

    def finalize(self, st: AdmmState, sigma, **kw) -> Trajectory:
        """Feasible trajectory from the ``eta`` iterate for engine schedule ``sigma``."""
        lo, hi = metrics.control_bounds(self.problem, sigma)
        p_b = np.clip(st.eta, lo, hi)
        fixed = metrics.repair_soc(self.problem, p_b, sigma)
        traj = metrics.make_trajectory(self.problem, fixed, sigma, **kw)
        traj.info["repair_max_W"] = float(np.max(np.abs(fixed - p_b), initial=0.0))
        traj.info["repair_sum_J"] = float(np.sum(np.abs(fixed - p_b)))
        return traj

    def finalize_relaxed(self, st: AdmmState) -> Trajectory:
        """Feasible point of the relaxation near the current iterate.

        The power is repaired inside the engine-on box first; ``sigma`` is
        then raised where needed so each power lies in its
        ``[g + sigma gamma, g + sigma delta]`` interval.
        """
        pr = self.problem
        ones = np.where(pr.in_clutch, 0.0, 1.0)
        lo, hi = metrics.control_bounds(pr, ones)
        p_b = metrics.repair_soc(pr, np.clip(st.eta, lo, hi), ones)
        sigma = np.clip(st.sigma, 0.0, 1.0)
        sigma = np.maximum(sigma, metrics.min_sigma_for_power(pr, p_b))
        sigma[pr.in_clutch] = 0.0
        lo, hi = metrics.control_bounds(pr, sigma)
        p_b = np.clip(p_b, lo, hi)
        return metrics.make_trajectory(pr, p_b, sigma)


def feasible_schedule(problem: EnergyProblem, sigma, score):
    """Switch the engine on at extra steps until ``sigma`` admits an SOC-feasible power.

    Candidates are the engine-off steps outside the clutch-open set, taken in
    decreasing order of ``score``; the shortest feasible prefix is found by
    bisection. Returns the schedule and the number of steps switched on.
    """
    sigma = np.asarray(sigma, dtype=float).copy()

    def ok(s):
        return metrics.is_soc_feasible(problem, *metrics.control_bounds(problem, s))

    if ok(sigma):
        return sigma, 0
    cand = np.flatnonzero((sigma == 0) & ~problem.in_clutch)
    cand = cand[np.argsort(-np.asarray(score, dtype=float)[cand], kind="stable")]

    def with_first(m):
        s = sigma.copy()
        s[cand[:m]] = 1.0
        return s

    lo, hi = 0, len(cand)  # with_first(hi) is feasible once the problem is
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(with_first(mid)):
            hi = mid
        else:
            lo = mid
    log.info("rounded engine schedule was SOC-infeasible; switched the engine on at %d more steps", hi)
    return with_first(hi), hi


def clip_to_domain(solver: AdmmSolver, p_b):
    out = np.asarray(p_b, dtype=float).copy()
    s = solver.split
    out[s] = np.clip(out[s], solver._dom_lo, solver._dom_hi)
    return out


def engine_off_trajectory(problem: EnergyProblem):
    """Return the all-electric battery power if it respects the SOC bounds, else ``None``."""
    soc = metrics.simulate_soc(problem, problem.g_of_pdrv_W)[1:]
    if np.all(soc >= problem.soc_min_J) and np.all(soc <= problem.soc_max_J):
        return problem.g_of_pdrv_W.copy()
    return None


def _check_feasible(problem: EnergyProblem):
    if not metrics.is_soc_feasible(problem, problem.pb_min_W, problem.pb_max_W):
        raise InfeasibleProblemError("SOC bounds cannot be met by any admissible battery power sequence")


def solve(problem: EnergyProblem, pen: Penalties | None = None, linear_solves: str = "dense",
          trace: bool = False) -> Solution:
    """Run both ADMM phases and return the binary engine schedule with its power split.

    The returned battery power comes from the ``eta`` iterate projected onto
    the bounds implied by the final engine schedule, followed by an exact
    SOC-feasibility repair; the SOC trajectory is re-simulated from it.
    ``converged`` is ``False`` if either phase hit its iteration cap.
    """
    pen = pen or Penalties()
    t0 = time.perf_counter()
    n = problem.n_steps
    off = engine_off_trajectory(problem)
    if off is not None:
        sol = Solution(**vars(metrics.make_trajectory(problem, off, np.zeros(n))), residuals=Residuals(0.0, 0.0))
        sol.wall_time_s = time.perf_counter() - t0
        return sol
    _check_feasible(problem)
    solver = AdmmSolver(problem, pen, linear_solves)
    history = [] if trace else None
    st = solver.initialize()
    st, res1, it1, ok1, _ = solver.run_phase(st, Phase.CONVEX, pen.max_iters_convex, history=history)
    relaxed = solver.finalize_relaxed(st)
    relaxed.converged = ok1
    st, res2, it2, ok2, stationary = solver.run_phase(st, Phase.BINARY, pen.max_iters_binary, history=history)
    sigma, added = feasible_schedule(problem, np.rint(st.sigma), st.kappa)
    traj = solver.finalize(st, sigma)
    info = dict(traj.info, sigma_stationary_iters=stationary, phase1_residuals=res1, engine_on_added=added)
    sol = Solution(
        **{**vars(traj), "info": info}, iters_convex=it1, iters_binary=it2, residuals=res2,
        relaxed=relaxed, history=history or [],
    )
    sol.converged = ok1 and ok2
    sol.wall_time_s = time.perf_counter() - t0
    if not sol.converged:
        log.warning("ADMM hit its iteration cap (phase 1: %s, phase 2: %s)", ok1, ok2)
    return sol


def solve_convex_fixed_sigma(problem: EnergyProblem, sigma, pen: Penalties | None = None,
                             linear_solves: str = "dense") -> Solution:
    """Optimal power split for a given engine schedule, by ADMM with ``sigma`` frozen.

    The ``kappa`` block is pinned to ``sigma`` with a zero multiplier so the
    switching terms stay inert. ``info["infeasible"]`` is set (and
    ``converged`` is ``False``) when ``sigma`` leaves no SOC-feasible
    power sequence.
    """
    pen = pen or Penalties()
    t0 = time.perf_counter()
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma[problem.in_clutch] != 0):
        raise ValueError("sigma must be 0 on clutch-open steps")
    lo, hi = metrics.control_bounds(problem, sigma)
    if not metrics.is_soc_feasible(problem, lo, hi):
        traj = metrics.make_trajectory(problem, np.clip(problem.g_of_pdrv_W, lo, hi), sigma)
        sol = Solution(**vars(traj))
        sol.converged = False
        sol.info["infeasible"] = True
        return sol
    solver = AdmmSolver(problem, pen, linear_solves)
    st = solver.initialize()
    st.sigma = sigma.copy()
    st.kappa = sigma.copy()
    st.eta = np.clip(st.eta, lo, hi)
    st, res, it, ok, _ = solver.run_phase(st, Phase.CONVEX, pen.max_iters_convex, fixed_sigma=sigma)
    traj = solver.finalize(st, sigma)
    sol = Solution(**vars(traj), iters_convex=it, residuals=res)
    sol.converged = ok
    sol.info["infeasible"] = False
    sol.wall_time_s = time.perf_counter() - t0
    return sol


def write_history(history, path) -> None:
    """Per-iteration diagnostics as CSV ``iter,phase,primal_norm,dual_norm,objective,sigma_changes``."""
    cols = ["iter", "phase", "primal_norm", "dual_norm", "objective", "sigma_changes"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
