import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import tiny_problems
from phev_ems import admm, metrics
from phev_ems.admm import AdmmSolver, AdmmState, Penalties, Phase
from phev_ems.cycles import preset_cycle
from phev_ems.powertrain import EnergyProblem, StepClass, battery_power, build_problem


def hand_problem(step_class, demand, soc=(900.0, 1000.0, 1050.0), idle=9000.0, kd=1e4):
    """Small problem with fixed loss coefficients; engine-on steps may take 20 kW off the motor."""
    step_class = np.asarray(step_class)
    n = len(step_class)
    demand = np.asarray(demand, dtype=float)
    alpha = np.tile([2e-6, 2.5, idle], (n, 1))
    beta = np.tile([3e-6, 1.04, 400.0], (n, 1))
    g = battery_power(demand, beta, 350.0, 0.1)
    split = step_class == StepClass.POWER_SPLIT
    lo = np.where(split, battery_power(demand - 2e4, beta, 350.0, 0.1), g)
    return EnergyProblem(
        demand_W=demand, drivetrain_speed_radps=np.full(n, 300.0), step_class=step_class,
        alpha=alpha, beta=beta, pb_min_W=lo, pb_max_W=g, soc_min_J=soc[0], soc_init_J=soc[1],
        soc_max_J=soc[2], kd=kd, voltage_V=350.0, resistance_ohm=0.1, capacity_J=1e4,
    )


@pytest.fixture(scope="module")
def small():
    return tiny_problems(6, (18, 25), seed=11)


# ---------------------------------------------------------------- types

def test_penalty_defaults():
    p = Penalties()
    assert (p.rho1, p.rho2, p.rho3, p.rho4, p.epsilon) == (8.86e-9, 2.34e-4, 2.34e-4, 2e3, 7e4)
    assert (p.max_iters_convex, p.max_iters_binary) == (5000, 5000)


@pytest.mark.parametrize("kw", [{"rho1": 0.0}, {"epsilon": -1.0}, {"max_iters_binary": 0},
                                {"backtrack_shrink": 1.0}, {"backtrack_slope": 0.5}])
def test_penalty_validation(kw):
    with pytest.raises(ValueError):
        Penalties(**kw)


# ----------------------------------------------------------- initialize

def test_initialize(small):
    pr = small[0]
    st0 = AdmmSolver(pr).initialize()
    for lam in (st0.lam1, st0.lam2, st0.lam3, st0.lam4):
        assert np.all(lam == 0)
    assert np.all(st0.sigma == 0) and np.all(st0.kappa == 0)
    for v in (st0.p_b, st0.eta, st0.zeta):
        np.testing.assert_array_equal(v, pr.g_of_pdrv_W)
    np.testing.assert_array_equal(st0.soc, np.clip(pr.soc_init_J - np.cumsum(pr.g_of_pdrv_W),
                                                   pr.soc_min_J, pr.soc_max_J))


def test_initial_soc_unclipped_when_regenerating():
    pr = hand_problem([1, 1, 1], [-1e3, -2e3, -1e3], soc=(0.0, 1e4, 1e5))
    st0 = AdmmSolver(pr).initialize()
    np.testing.assert_allclose(st0.soc, 1e4 - np.cumsum(pr.g_of_pdrv_W), rtol=1e-15)


# -------------------------------------------------------------- updates

def test_kappa_trivial_cases():
    pr = hand_problem([0, 0, 1], [1e4, 2e4, -1e3])
    s = AdmmSolver(pr)
    st0 = s.initialize()
    st0.sigma = np.array([0.3, 0.7, 1.0])
    st0.lam4 = st0.sigma.copy()
    assert np.allclose(s.update_kappa(st0), 0.0)
    free = AdmmSolver(hand_problem([0, 0, 1], [1e4, 2e4, -1e3], kd=0.0))
    st0.lam4 = np.array([0.1, -0.2, 0.0])
    np.testing.assert_allclose(free.update_kappa(st0), st0.sigma - st0.lam4, rtol=1e-14)


def test_pb_average_off_split():
    pr = hand_problem([1, 2], [-1e3, 5e2])
    s = AdmmSolver(pr)
    st0 = s.initialize()
    st0.zeta = np.array([123.0, -50.0])
    st0.eta = np.array([120.0, -45.0])
    st0.lam2 = np.array([0.0, 0.0])
    st0.lam3 = np.array([-3.0, 5.0])
    np.testing.assert_allclose(s.update_pb(st0), [123.0, -50.0])


def _post_hoc_gradient(pr, s, P, zc, ec):
    k = s.split
    dphi = np.array([oracles.fuel_gradient(pr, kk, pp) for kk, pp in zip(k, P)])
    return dphi + s.pen.rho2 * (P - zc) + s.pen.rho3 * (P - ec)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), spread=st.floats(1e2, 3e4))
def test_newton_gradient_post_hoc(small, seed, spread):
    pr = small[seed % len(small)]
    s = AdmmSolver(pr)
    rng = np.random.default_rng(seed)
    g = pr.g_of_pdrv_W[s.split]
    zc = g + rng.normal(0, spread, g.size)
    ec = g + rng.normal(0, spread, g.size)
    P, G, _ = s.newton_pb(zc, ec, g)
    grad = _post_hoc_gradient(pr, s, P, zc, ec)
    interior = (P > s._dom_lo) & (P < s._dom_hi)
    scale = s.pen.rho2 + s.pen.rho3
    assert np.all(np.abs(grad[interior]) / scale <= 1e-6)
    # at a domain end the gradient must point outward
    assert np.all(grad[P >= s._dom_hi] <= 1e-6 * scale)
    assert np.all(grad[P <= s._dom_lo] >= -1e-6 * scale)


def test_newton_penalty_dominance(small):
    pr = small[0]
    s = AdmmSolver(pr, Penalties(rho2=1e12))
    g = pr.g_of_pdrv_W[s.split]
    target = 0.5 * (pr.pb_min_W[s.split] + g)
    P, _, _ = s.newton_pb(target, g, g)
    np.testing.assert_allclose(P, target, rtol=1e-9, atol=1e-6)


def test_soc_update_hand_values():
    pr = hand_problem([0, 0, 0, 0], [1e4] * 4, soc=(900.0, 1000.0, 1050.0))
    s = AdmmSolver(pr)
    st0 = s.initialize()
    st0.zeta = np.array([-80.0, 60.0, 100.0, -20.0])  # cumulative 1080, 1020, 920, 940 before lam1
    st0.lam1 = np.array([0.0, 5.0, -30.0, 0.0])
    np.testing.assert_array_equal(s.update_soc(st0), [1050.0, 1025.0, 900.0, 940.0])


def test_soc_update_pins_lower_bound(small):
    pr = small[0]
    s = AdmmSolver(pr)
    st0 = s.initialize()
    st0.zeta = np.full(pr.n_steps, 1e6)
    assert np.all(s.update_soc(st0) == pr.soc_min_J)


def _triangle_grid_min(c, a, b, gam, dlt, r3, r4, n=2001):
    sig = np.linspace(0.0, 1.0, n)[:, None]
    t = np.linspace(0.0, 1.0, n)[None, :]
    e = sig * (gam + t * (dlt - gam))
    J = c * sig + 0.5 * r3 * (e - a) ** 2 + 0.5 * r4 * (sig - b) ** 2
    return float(J.min())


def test_eta_sigma_convex_matches_grid_search(small):
    rng = np.random.default_rng(5)
    pen = Penalties()
    checked = 0
    for pr in small[:3]:
        s = AdmmSolver(pr, pen)
        st0 = s.initialize()
        st0.p_b = pr.g_of_pdrv_W + rng.uniform(-3e4, 1e4, pr.n_steps)
        st0.kappa = rng.uniform(-0.5, 1.5, pr.n_steps)
        eta, sig = s.update_eta_sigma(st0, Phase.CONVEX)
        for k in np.flatnonzero(pr.in_split)[:4]:
            a = st0.p_b[k] + st0.lam3[k] - pr.g_of_pdrv_W[k]
            b = st0.kappa[k] + st0.lam4[k]
            c = pr.idle_fuel_W[k]
            J = c * sig[k] + 0.5 * pen.rho3 * (eta[k] - pr.g_of_pdrv_W[k] - a) ** 2 + 0.5 * pen.rho4 * (sig[k] - b) ** 2
            grid = _triangle_grid_min(c, a, b, pr.gamma_W[k], pr.delta_W[k], pen.rho3, pen.rho4)
            assert J <= grid + 1e-9 * abs(grid)
            assert grid - J <= 1e-3 * (1.0 + abs(grid))
            checked += 1
    assert checked >= 6


def test_eta_sigma_feasible_and_clutch(small):
    pr = small[1]
    s = AdmmSolver(pr)
    st0 = s.initialize()
    rng = np.random.default_rng(3)
    st0.p_b = pr.g_of_pdrv_W + rng.normal(0, 2e4, pr.n_steps)
    st0.kappa = rng.uniform(0, 1, pr.n_steps)
    for phase in Phase:
        eta, sig = s.update_eta_sigma(st0, phase)
        lo, hi = metrics.control_bounds(pr, sig)
        assert np.all(eta >= lo - 1e-6) and np.all(eta <= hi + 1e-6)
        assert np.all(sig[pr.in_clutch] == 0)
        if phase is Phase.BINARY:
            assert set(np.unique(sig)) <= {0.0, 1.0}


def test_eta_sigma_degenerate_brake_step():
    pr = hand_problem([1], [-2e3], idle=500.0)
    pen = Penalties()
    s = AdmmSolver(pr, pen)
    st0 = s.initialize()
    st0.kappa = np.array([0.9])
    eta, sig = s.update_eta_sigma(st0, Phase.CONVEX)
    assert eta[0] == pr.g_of_pdrv_W[0]
    assert sig[0] == pytest.approx(0.9 - 500.0 / pen.rho4)


def test_eta_sigma_binary_zero_idle():
    pr = hand_problem([0], [3e4], idle=0.0)
    s = AdmmSolver(pr)
    st0 = s.initialize()
    st0.kappa = np.array([1.0])
    st0.p_b = np.array([0.5 * (pr.pb_min_W[0] + pr.pb_max_W[0])])
    eta, sig = s.update_eta_sigma(st0, Phase.BINARY)
    assert sig[0] == 1.0 and eta[0] == st0.p_b[0]


def test_zeta_solve_residual_after_update(small):
    pr = small[2]
    s = AdmmSolver(pr)
    st0 = s.initialize()
    st0.p_b = st0.p_b + 1e3
    st0.lam1 = np.full(pr.n_steps, 50.0)
    z = s.update_zeta(st0)
    p = s.pen
    rhs = p.rho2 * (st0.p_b + st0.lam2) + p.rho1 * np.cumsum((pr.soc_init_J - st0.soc + st0.lam1)[::-1])[::-1]
    lhs = p.rho2 * z + p.rho1 * np.cumsum(np.cumsum(z)[::-1])[::-1]
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(rhs)


def test_dual_update_hand_values():
    pr = hand_problem([0, 0], [1e4, 1e4], soc=(900.0, 1000.0, 1050.0))
    s = AdmmSolver(pr)
    st0 = s.initialize()
    st0.zeta = np.array([10.0, 20.0])
    st0.soc = np.array([985.0, 975.0])
    st0.p_b = np.array([12.0, 18.0])
    st0.eta = np.array([11.0, 19.0])
    st0.kappa = np.array([0.5, 0.25])
    st0.sigma = np.array([0.0, 1.0])
    for lam in ("lam1", "lam2", "lam3", "lam4"):
        setattr(st0, lam, np.ones(2))
    l1, l2, l3, l4 = s.update_duals(st0)
    np.testing.assert_array_equal(l1, [6.0, -4.0])
    np.testing.assert_array_equal(l2, [3.0, -1.0])
    np.testing.assert_array_equal(l3, [2.0, 0.0])
    np.testing.assert_array_equal(l4, [1.5, 0.25])


def test_duals_unchanged_when_primal_feasible(small):
    pr = small[0]
    s = AdmmSolver(pr)
    st0 = s.initialize()
    st0.soc = pr.soc_init_J - np.cumsum(st0.zeta)
    for new, old in zip(s.update_duals(st0), (st0.lam1, st0.lam2, st0.lam3, st0.lam4)):
        np.testing.assert_array_equal(new, old)


# ------------------------------------------------------------ residuals

def _random_state(rng, n):
    arr = lambda scale: rng.normal(0.0, scale, n)  # noqa: E731
    return AdmmState(kappa=arr(1), p_b=arr(1e4), soc=arr(1e6), sigma=rng.uniform(0, 1, n), eta=arr(1e4),
                     zeta=arr(1e4), lam1=arr(1), lam2=arr(1), lam3=arr(1), lam4=arr(1))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_dual_residual_matches_dense_matrices(seed):
    pr = hand_problem([0, 1, 0, 2, 0], [1e4, -1e3, 2e4, 1e2, 5e3])
    s = AdmmSolver(pr)
    rng = np.random.default_rng(seed)
    prev, new = _random_state(rng, 5), _random_state(rng, 5)
    dense = oracles.dense_dual_residual(s.pen, 5, prev, new)
    assert np.max(np.abs(s.dual_residual_vector(prev, new) - dense)) <= 1e-10


def test_residual_trivial_cases(small):
    pr = small[0]
    s = AdmmSolver(pr)
    st0 = s.initialize()
    assert s.residuals(st0, st0).dual_norm == 0.0
    feas = st0.copy()
    feas.soc = pr.soc_init_J - np.cumsum(feas.zeta)
    assert s.residuals(st0, feas).primal_norm == 0.0


# ----------------------------------------------------------------- solve

def test_engine_off_short_circuit(params):
    pr = build_problem(preset_cycle("gentle"), params)
    sol = admm.solve(pr)
    assert sol.converged and sol.iterations == 0
    assert np.all(sol.sigma == 0) and sol.fuel_J == 0.0
    np.testing.assert_array_equal(sol.p_b_W, pr.g_of_pdrv_W)


@pytest.fixture(scope="module")
def solved(small):
    return [(pr, admm.solve(pr)) for pr in small]


def test_solutions_feasible_and_consistent(solved):
    for pr, sol in solved:
        assert sol.converged
        assert sol.residuals.worst <= Penalties().epsilon
        assert np.all(sol.soc_J[1:] == sol.soc_J[:-1] - sol.p_b_W * pr.dt_s)
        viol = metrics.constraint_violation(pr, sol)
        tol = 1e-6 * pr.capacity_J
        assert viol["soc_low"] <= tol and viol["soc_high"] <= tol
        assert viol["power_low"] <= 1e-6 * np.abs(pr.pb_min_W).max()
        assert viol["power_high"] <= 1e-6 * np.abs(pr.pb_max_W).max()
        assert np.all(sol.sigma[pr.in_clutch] == 0)
        assert set(np.unique(sol.sigma)) <= {0.0, 1.0}
        assert sol.switch_count == metrics.switch_count(sol.sigma)
        assert sol.fuel_J == pytest.approx(float(np.sum(metrics.fuel_stage_terms(pr, sol.p_b_W, sol.sigma))))


def test_relaxation_bounds_binary_objective(solved):
    for pr, sol in solved:
        assert sol.relaxed.objective_J <= sol.objective_J * (1 + 1e-6)


def test_banded_path_gives_same_schedule(small):
    pr = small[3]
    a = admm.solve(pr, linear_solves="dense")
    b = admm.solve(pr, linear_solves="banded")
    assert a.iterations == pytest.approx(b.iterations, abs=2)
    assert a.fuel_J == pytest.approx(b.fuel_J, rel=1e-6)


def test_iteration_cap_reported(small):
    sol = admm.solve(small[0], Penalties(max_iters_convex=3, max_iters_binary=3))
    assert not sol.converged
    assert sol.iters_convex == 3 and sol.iters_binary == 3


def test_history_csv(small, tmp_path):
    sol = admm.solve(small[0], trace=True)
    path = tmp_path / "iters.csv"
    admm.write_history(sol.history, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["iter", "phase", "primal_norm", "dual_norm", "objective", "sigma_changes"]
    assert len(rows) == sol.iterations
    assert {r["phase"] for r in rows} == {"convex", "binary"}


def test_feasible_schedule_switches_engine_on(small):
    pr = small[0]
    sigma, added = admm.feasible_schedule(pr, np.zeros(pr.n_steps), np.arange(pr.n_steps, dtype=float))
    assert added > 0
    assert metrics.is_soc_feasible(pr, *metrics.control_bounds(pr, sigma))
    assert np.all(sigma[pr.in_clutch] == 0)
    # the candidates are taken in order of decreasing score
    on = np.flatnonzero(sigma)
    assert np.all(on >= np.sort(np.flatnonzero(~pr.in_clutch))[::-1][added - 1])


# ------------------------------------------------------- fixed schedule

@pytest.mark.slow
def test_fixed_sigma_matches_lattice_dp():
    # epsilon is an absolute residual norm; 1 W on five steps is needed to reach 1e-4
    for pr in tiny_problems(2, (5, 5), soc=(0.4, 0.401, 0.402), seed=2):
        sigma = np.where(pr.in_clutch, 0.0, 1.0)
        sol = admm.solve_convex_fixed_sigma(pr, sigma, Penalties(epsilon=1.0, max_iters_convex=150_000))
        ref = oracles.fixed_sigma_dp(pr, sigma, soc_step_J=10.0)
        assert sol.converged and not sol.info["infeasible"]
        assert sol.fuel_J == pytest.approx(ref, rel=1e-4)


def test_fixed_sigma_infeasible_flag(small):
    pr = small[0]
    sol = admm.solve_convex_fixed_sigma(pr, np.zeros(pr.n_steps))
    assert sol.info["infeasible"] and not sol.converged


def test_fixed_sigma_rejects_engine_on_clutch():
    pr = hand_problem([2, 0], [1e3, 1e4])
    with pytest.raises(ValueError):
        admm.solve_convex_fixed_sigma(pr, np.array([1.0, 1.0]))
