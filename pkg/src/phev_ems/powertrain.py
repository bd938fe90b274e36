"""Per-step data of the energy management problem.

A drive cycle and a set of vehicle parameters are turned into an
:class:`EnergyProblem`: demand powers, the step partition, loss-map
coefficients, battery power limits and the engine-switching constraint
coefficients ``gamma``/``delta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .cycles import DriveCycle, CycleError
from .params import VehicleParams, gear_speed


class StepClass(IntEnum):
    POWER_SPLIT = 0  # P_drv >= 0, drivetrain above engine idle speed
    BRAKE_OR_NEGATIVE = 1  # P_drv < 0, drivetrain above engine idle speed
    CLUTCH_OPEN = 2  # drivetrain below engine idle speed, engine forced off


class InfeasibleProblemError(ValueError):
    """Raised when no admissible control exists; ``step`` names the offending step if known."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class BatteryDomainError(ValueError):
    """Raised when a battery power lies outside the domain of the circuit model."""


# --------------------------------------------------------------------------
# loss functions

def engine_loss(p_eng, alpha):
    """Fuel power ``a2 p**2 + a1 p + a0`` for coefficients ``alpha = (a2, a1, a0)``."""
    alpha = np.asarray(alpha, dtype=float)
    a2, a1, a0 = alpha[..., 0], alpha[..., 1], alpha[..., 2]
    return (a2 * p_eng + a1) * p_eng + a0


def motor_loss(p_em, beta):
    """Electrical power ``b2 p**2 + b1 p + b0`` drawn by the motor for shaft power ``p_em``."""
    beta = np.asarray(beta, dtype=float)
    b2, b1, b0 = beta[..., 0], beta[..., 1], beta[..., 2]
    return (b2 * p_em + b1) * p_em + b0


def battery_power(p_em, beta, voltage, resistance):
    """Internal battery power for motor shaft power ``p_em`` under the equivalent circuit model.

    Evaluates ``V**2/(2R) * (1 - sqrt(1 - 4R h/V**2))`` in the cancellation-free
    form ``2h / (1 + sqrt(1 - 4R h/V**2))``, which also covers ``R = 0``.

    Raises
    ------
    BatteryDomainError
        If the discriminant is negative, i.e. the power exceeds what the
        battery can deliver.
    """
    h = motor_loss(p_em, beta)
    disc = 1.0 - 4.0 * resistance * h / voltage**2
    if np.any(disc < 0):
        raise BatteryDomainError("motor power beyond battery capability (negative discriminant)")
    return 2.0 * h / (1.0 + np.sqrt(disc))


def battery_power_inverse(p_b, beta, voltage, resistance):
    """Motor shaft power that draws battery power ``p_b`` (inverse of :func:`battery_power`).

    The closed form ``-b1/(2 b2) + sqrt(Q)`` is evaluated stably as
    ``2 u / (b1 + 2 b2 sqrt(Q))`` with ``u = p_b - R p_b**2/V**2 - b0``.
    """
    p_b = np.asarray(p_b, dtype=float)
    beta = np.asarray(beta, dtype=float)
    b2, b1, b0 = beta[..., 0], beta[..., 1], beta[..., 2]
    if np.any(b2 <= 0):
        raise BatteryDomainError("battery_power_inverse requires beta2 > 0")
    if resistance > 0 and np.any(p_b > voltage**2 / (2.0 * resistance)):
        raise BatteryDomainError("battery power above V^2/2R is not attainable")
    u = p_b - resistance * p_b**2 / voltage**2 - b0
    rad = u / b2 + b1**2 / (4.0 * b2**2)
    if np.any(rad < 0):
        raise BatteryDomainError("battery power outside the invertible range (negative radicand)")
    root = np.sqrt(rad)
    den = b1 + 2.0 * b2 * root
    with np.errstate(divide="ignore", invalid="ignore"):
        stable = 2.0 * u / den
    direct = -b1 / (2.0 * b2) + root
    return np.where(den > 0, stable, direct)


def battery_inverse_derivatives(p_b, beta, voltage, resistance):
    """Return ``(x, dx/dp, d2x/dp2)`` for ``x = battery_power_inverse(p_b)``.

    Uses ``h(x) = p - R p**2/V**2`` so ``x' = (1 - 2Rp/V**2) / h'(x)`` and
    ``x'' = -(2R/V**2 + 2 b2 x'**2) / h'(x)``. Outside the domain the
    returned values are non-finite instead of raising.
    """
    p_b = np.asarray(p_b, dtype=float)
    beta = np.asarray(beta, dtype=float)
    b2, b1, b0 = beta[..., 0], beta[..., 1], beta[..., 2]
    c = resistance / voltage**2
    u = p_b - c * p_b**2 - b0
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.sqrt(u / b2 + b1**2 / (4.0 * b2**2))
        den = b1 + 2.0 * b2 * root
        x = np.where(den > 0, 2.0 * u / den, -b1 / (2.0 * b2) + root)
        hp = 2.0 * b2 * root  # h'(x) = b1 + 2 b2 x
        dx = (1.0 - 2.0 * c * p_b) / hp
        d2x = -(2.0 * c + 2.0 * b2 * dx**2) / hp
    return x, dx, d2x


# --------------------------------------------------------------------------
# problem construction

def demand_power(cycle: DriveCycle, params: VehicleParams) -> np.ndarray:
    """Tractive power demand ``P_drv,k`` for ``k = 0..N-1`` (forward-difference acceleration)."""
    cycle.validate()
    v = cycle.velocity_mps
    theta = cycle.gradient_rad
    n = len(v) - 1
    vdot = np.diff(v) / cycle.dt_s
    vk, th = v[:n], theta[:n]
    m, g = params.mass_kg, params.gravity
    force = (
        m * vdot
        + 0.5 * params.air_density * vk**2 * params.drag_coeff * params.frontal_area_m2
        + params.rolling_resist * m * g * np.cos(th)
        + m * g * np.sin(th)
    )
    brake = cycle.brake_power_W if cycle.brake_power_W is not None else np.zeros(n)
    return force * vk - brake


def drivetrain_speed(v, params: VehicleParams):
    """Drivetrain input speed from the velocity-based gear heuristic."""
    return gear_speed(v, params.gear_table)


def classify_steps(demand_W, drivetrain_speed_radps, engine_min_speed_radps) -> np.ndarray:
    demand_W = np.asarray(demand_W, dtype=float)
    omega = np.asarray(drivetrain_speed_radps, dtype=float)
    if demand_W.shape != omega.shape:
        raise ValueError("demand and drivetrain speed series must have the same length")
    cls = np.where(demand_W >= 0, StepClass.POWER_SPLIT, StepClass.BRAKE_OR_NEGATIVE)
    cls = np.where(omega < engine_min_speed_radps, StepClass.CLUTCH_OPEN, cls)
    return cls.astype(np.int8)


@dataclass
class EnergyProblem:
    """Fully preprocessed per-step instance of the energy management problem.

    All power series have length ``n_steps``; energies are in joules and the
    sampling interval is ``dt_s`` (SOC dynamics ``E[k+1] = E[k] - P_b[k] dt``).
    """

    demand_W: np.ndarray
    drivetrain_speed_radps: np.ndarray
    step_class: np.ndarray
    alpha: np.ndarray  # (N, 3): a2, a1, a0
    beta: np.ndarray  # (N, 3): b2, b1, b0
    pb_min_W: np.ndarray
    pb_max_W: np.ndarray
    soc_min_J: float
    soc_max_J: float
    soc_init_J: float
    kd: float
    voltage_V: float
    resistance_ohm: float
    capacity_J: float
    dt_s: float = 1.0
    g_of_pdrv_W: np.ndarray = field(default=None)
    gamma_W: np.ndarray = field(default=None)
    delta_W: np.ndarray = field(default=None)
    brake_W: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("demand_W", "drivetrain_speed_radps", "pb_min_W", "pb_max_W"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.step_class = np.asarray(self.step_class, dtype=np.int8)
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1, 3)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1, 3)
        n = self.n_steps
        for name in ("drivetrain_speed_radps", "step_class", "pb_min_W", "pb_max_W"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.alpha.shape[0] != n or self.beta.shape[0] != n:
            raise ValueError("loss coefficient arrays must have one row per step")
        if self.g_of_pdrv_W is None:
            self.g_of_pdrv_W = self.g(self.demand_W)
        if self.gamma_W is None:
            self.gamma_W = self.pb_min_W - self.g_of_pdrv_W
        if self.delta_W is None:
            self.delta_W = self.pb_max_W - self.g_of_pdrv_W
        if self.brake_W is None:
            self.brake_W = np.zeros(n)
        if not (self.soc_min_J <= self.soc_init_J <= self.soc_max_J):
            raise ValueError("SOC bounds must satisfy soc_min <= soc_init <= soc_max")

    @property
    def n_steps(self) -> int:
        return len(self.demand_W)

    @property
    def in_split(self) -> np.ndarray:
        return self.step_class == StepClass.POWER_SPLIT

    @property
    def in_brake(self) -> np.ndarray:
        return self.step_class == StepClass.BRAKE_OR_NEGATIVE

    @property
    def in_clutch(self) -> np.ndarray:
        return self.step_class == StepClass.CLUTCH_OPEN

    @property
    def idle_fuel_W(self) -> np.ndarray:
        """``f_k(0)`` for every step."""
        return self.alpha[:, 2]

    def f(self, p_eng, k=slice(None)):
        return engine_loss(p_eng, self.alpha[k])

    def g(self, p_em, k=slice(None)):
        return battery_power(p_em, self.beta[k], self.voltage_V, self.resistance_ohm)

    def g_inv(self, p_b, k=slice(None)):
        return battery_power_inverse(p_b, self.beta[k], self.voltage_V, self.resistance_ohm)

    def subset(self, n: int) -> "EnergyProblem":
        """First ``n`` steps of this problem with the same SOC limits."""
        return EnergyProblem(
            demand_W=self.demand_W[:n], drivetrain_speed_radps=self.drivetrain_speed_radps[:n],
            step_class=self.step_class[:n], alpha=self.alpha[:n], beta=self.beta[:n],
            pb_min_W=self.pb_min_W[:n], pb_max_W=self.pb_max_W[:n], soc_min_J=self.soc_min_J,
            soc_max_J=self.soc_max_J, soc_init_J=self.soc_init_J, kd=self.kd,
            voltage_V=self.voltage_V, resistance_ohm=self.resistance_ohm,
            capacity_J=self.capacity_J, dt_s=self.dt_s, brake_W=self.brake_W[:n],
        )

    def check(self, atol: float = 1e-9) -> None:
        """Verify the structural invariants, raising :class:`InfeasibleProblemError`."""
        bad = np.flatnonzero((self.gamma_W > atol) | (self.delta_W < -atol))
        if bad.size:
            k = int(bad[0])
            raise InfeasibleProblemError(
                f"step {k}: gamma={self.gamma_W[k]:.6g}, delta={self.delta_W[k]:.6g} violate gamma <= 0 <= delta",
                step=k,
            )
        off = ~self.in_split
        if np.any(np.abs(self.gamma_W[off]) > atol) or np.any(np.abs(self.delta_W[off]) > atol):
            raise InfeasibleProblemError("gamma/delta must vanish outside the power-split set")


def _hmax_shaft_power(beta, voltage, resistance):
    # largest shaft power for which the circuit model stays real-valued
    if resistance == 0:
        return np.full(beta.shape[0], np.inf)
    b2, b1, b0 = beta[:, 0], beta[:, 1], beta[:, 2]
    hmax = voltage**2 / (4.0 * resistance)
    return (-b1 + np.sqrt(b1**2 - 4.0 * b2 * (b0 - hmax))) / (2.0 * b2)


def build_problem(
    cycle: DriveCycle,
    params: VehicleParams,
    soc_init_frac: float = 0.6,
    soc_min_frac: float = 0.4,
    soc_max_frac: float = 0.7,
    kd: float = 1e4,
    saturate_regen: bool = True,
) -> EnergyProblem:
    """Assemble the :class:`EnergyProblem` for ``cycle``.

    Motor power limits per step intersect the rated power caps with the ranges
    on which ``g_k`` is real-valued and ``g_k``, ``f_k`` are non-decreasing.
    With ``saturate_regen`` the friction brake absorbs any negative demand
    beyond the motor's regenerative limit.

    Raises
    ------
    InfeasibleProblemError
        If some step demands more than the motor alone can deliver (the
        engine-off branch of every step must be representable) or more than
        engine and motor together.
    """
    if not (0.0 <= soc_min_frac <= soc_init_frac <= soc_max_frac <= 1.0):
        raise ValueError("SOC fractions must satisfy 0 <= min <= init <= max <= 1")
    if kd < 0:
        raise ValueError("kd must be >= 0")
    raw = demand_power(cycle, params)
    n = len(raw)
    omega = drivetrain_speed(cycle.velocity_mps[:n], params)
    alpha = params.engine_loss_map.coefficients(omega).reshape(n, 3)
    beta = params.motor_loss_map.coefficients(omega).reshape(n, 3)
    V, R = params.battery_voltage_V, params.battery_resistance_ohm

    # admissible motor power range, independent of the engine
    vertex = -beta[:, 1] / (2.0 * beta[:, 0])
    pem_floor = np.maximum(params.motor_power_min_W, vertex + 1e-6 * np.maximum(1.0, np.abs(vertex)))
    pem_ceil = np.minimum(params.motor_power_max_W, _hmax_shaft_power(beta, V, R))

    p_drv = raw.copy()
    brake = np.zeros(n)
    if saturate_regen:
        low = p_drv < pem_floor
        brake[low] = pem_floor[low] - p_drv[low]
        p_drv[low] = pem_floor[low]
    elif np.any(p_drv < pem_floor):
        k = int(np.argmax(p_drv < pem_floor))
        raise InfeasibleProblemError(f"step {k}: regenerative demand {p_drv[k]:.1f} W below motor limit", step=k)

    cls = classify_steps(p_drv, omega, params.engine_min_speed_radps)
    split = cls == StepClass.POWER_SPLIT

    over_all = split & (p_drv > pem_ceil + params.engine_power_max_W)
    if np.any(over_all):
        k = int(np.argmax(over_all))
        raise InfeasibleProblemError(
            f"step {k}: demand {p_drv[k]:.1f} W exceeds engine + motor capability", step=k)
    over_motor = p_drv > pem_ceil
    if np.any(over_motor):
        k = int(np.argmax(over_motor))
        raise InfeasibleProblemError(
            f"step {k}: demand {p_drv[k]:.1f} W exceeds motor-only capability {pem_ceil[k]:.1f} W "
            "(engine-off operation must be admissible at every step)", step=k)

    # engine-on limits for power-split steps: P_eng = P_drv - P_em within the engine range,
    # and P_eng above the vertex of f so f is non-decreasing
    a2, a1 = alpha[:, 0], alpha[:, 1]
    with np.errstate(divide="ignore"):
        f_vertex = np.where(a2 > 0, -a1 / (2.0 * a2), -np.inf)
    eng_min = np.maximum(params.engine_power_min_W, f_vertex)
    pem_lo = np.maximum(pem_floor, p_drv - params.engine_power_max_W)
    pem_hi = np.minimum(pem_ceil, p_drv - eng_min)

    g_drv = battery_power(p_drv, beta, V, R)
    pb_min = g_drv.copy()
    pb_max = g_drv.copy()
    pb_min[split] = battery_power(pem_lo[split], beta[split], V, R)
    pb_max[split] = battery_power(pem_hi[split], beta[split], V, R)

    cap = params.battery_capacity_J
    problem = EnergyProblem(
        demand_W=p_drv, drivetrain_speed_radps=omega, step_class=cls, alpha=alpha, beta=beta,
        pb_min_W=pb_min, pb_max_W=pb_max,
        soc_min_J=soc_min_frac * cap, soc_max_J=soc_max_frac * cap, soc_init_J=soc_init_frac * cap,
        kd=kd, voltage_V=V, resistance_ohm=R, capacity_J=cap, dt_s=cycle.dt_s,
        g_of_pdrv_W=g_drv, brake_W=brake,
    )
    problem.gamma_W[~split] = 0.0
    problem.delta_W[~split] = 0.0
    problem.check()
    return problem


__all__ = [
    "StepClass", "InfeasibleProblemError", "BatteryDomainError", "CycleError", "EnergyProblem",
    "engine_loss", "motor_loss", "battery_power", "battery_power_inverse",
    "battery_inverse_derivatives", "demand_power", "drivetrain_speed", "classify_steps",
    "build_problem",
]
