"""Vehicle parameters, loss maps and the gear heuristic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ParameterError(ValueError):
    """Raised when a parameter bundle violates a physical or convexity requirement."""


def _polyval(coeffs, x):
    # ascending powers: c0 + c1 x + c2 x^2 + ...
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for c in reversed(coeffs):
        out = out * x + c
    return out


@dataclass(frozen=True)
class QuadraticLossMap:
    """Loss map ``c2(w) p**2 + c1(w) p + c0(w)`` with speed-dependent coefficients.

    Each coefficient is itself a polynomial in drivetrain speed ``w`` (rad/s),
    stored with ascending powers.
    """

    c2: tuple[float, ...]
    c1: tuple[float, ...]
    c0: tuple[float, ...]

    def coefficients(self, omega):
        """Return an ``(..., 3)`` array of ``(c2, c1, c0)`` evaluated at ``omega``."""
        omega = np.asarray(omega, dtype=float)
        return np.stack(
            [_polyval(self.c2, omega), _polyval(self.c1, omega), _polyval(self.c0, omega)],
            axis=-1,
        )


def default_engine_map() -> QuadraticLossMap:
    # fuel power (W) of a ~100 kW petrol engine: ~37% peak efficiency,
    # idle burn rising with crank speed
    return QuadraticLossMap(c2=(2.0e-6,), c1=(2.2, 1.0e-3), c0=(3000.0, 20.0))


def default_motor_map() -> QuadraticLossMap:
    # electrical power (W) drawn by a ~50 kW motor for a given shaft power
    return QuadraticLossMap(c2=(3.0e-6,), c1=(1.04,), c0=(100.0, 1.0))


def default_gear_table() -> tuple[tuple[float, float], ...]:
    # (lower velocity threshold m/s, drivetrain speed per unit velocity rad/m);
    # ratio = gearbox * final drive / wheel radius with r = 0.3 m, fd = 4
    return ((0.0, 46.7), (5.0, 28.0), (10.0, 18.7), (15.0, 13.3), (22.0, 10.7))


@dataclass(frozen=True)
class VehicleParams:
    mass_kg: float = 1800.0
    air_density: float = 1.225
    drag_coeff: float = 0.30
    frontal_area_m2: float = 2.2
    rolling_resist: float = 0.010
    gravity: float = 9.81
    battery_voltage_V: float = 350.0
    battery_resistance_ohm: float = 0.1
    battery_capacity_J: float = 21.5 * 3600.0 * 350.0
    engine_min_speed_radps: float = 1000.0 * 2.0 * np.pi / 60.0
    engine_loss_map: QuadraticLossMap = field(default_factory=default_engine_map)
    motor_loss_map: QuadraticLossMap = field(default_factory=default_motor_map)
    engine_power_max_W: float = 100e3
    engine_power_min_W: float = 0.0
    motor_power_max_W: float = 50e3
    motor_power_min_W: float = -50e3
    gear_table: tuple[tuple[float, float], ...] = field(default_factory=default_gear_table)
    # upper end of the velocity range scanned when checking loss-map convexity
    max_speed_mps: float = 60.0

    def __post_init__(self):
        self.validate()

    def speed_samples(self, n: int = 241) -> np.ndarray:
        """Drivetrain speeds reachable over ``[0, max_speed_mps]``, including both sides of each gear change."""
        v = np.linspace(0.0, self.max_speed_mps, n)
        thresholds = np.array([t for t, _ in self.gear_table[1:]])
        v = np.concatenate([v, thresholds, np.nextafter(thresholds, -np.inf)])
        return gear_speed(np.sort(v), self.gear_table)

    def validate(self) -> None:
        for name in ("mass_kg", "air_density", "battery_voltage_V", "battery_capacity_J", "gravity"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not self.battery_resistance_ohm >= 0:
            raise ParameterError("battery_resistance_ohm must be >= 0")
        if not self.engine_min_speed_radps > 0:
            raise ParameterError("engine_min_speed_radps must be > 0")
        if not (self.motor_power_min_W < 0 < self.motor_power_max_W):
            raise ParameterError("motor power limits must satisfy motor_power_min_W < 0 < motor_power_max_W")
        if not (self.engine_power_min_W <= 0 < self.engine_power_max_W):
            raise ParameterError("engine power limits must satisfy engine_power_min_W <= 0 < engine_power_max_W")
        if len(self.gear_table) == 0:
            raise ParameterError("gear_table must not be empty")
        thresholds = [t for t, _ in self.gear_table]
        if thresholds[0] != 0.0:
            raise ParameterError("gear_table must start at velocity threshold 0")
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ParameterError("gear_table thresholds must be strictly increasing")
        if any(r <= 0 for _, r in self.gear_table):
            raise ParameterError("gear_table ratios must be > 0")
        omega = self.speed_samples()
        alpha = self.engine_loss_map.coefficients(omega)
        beta = self.motor_loss_map.coefficients(omega)
        if np.any(alpha[:, 0] < 0):
            w = omega[np.argmax(alpha[:, 0] < 0)]
            raise ParameterError(f"engine_loss_map.alpha2 must be >= 0 (violated at {w:.1f} rad/s)")
        if np.any(beta[:, 0] <= 0):
            w = omega[np.argmax(beta[:, 0] <= 0)]
            raise ParameterError(f"motor_loss_map.beta2 must be > 0 (violated at {w:.1f} rad/s)")


def gear_speed(v, gear_table) -> np.ndarray:
    """Drivetrain speed ``v * ratio(v)`` for the gear whose threshold interval contains ``v``."""
    v = np.asarray(v, dtype=float)
    thresholds = np.array([t for t, _ in gear_table])
    ratios = np.array([r for _, r in gear_table])
    idx = np.searchsorted(thresholds, v, side="right") - 1
    return v * ratios[np.clip(idx, 0, len(ratios) - 1)]
