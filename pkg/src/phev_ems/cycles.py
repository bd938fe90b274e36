"""Drive cycles: CSV ingestion, validation and synthetic generation.

CSV schema (one row per second)::

    t_s,v_mps,grade_rad[,p_brake_w]

``t_s`` must read 0, 1, 2, ...; a cycle with ``N + 1`` rows defines ``N``
optimization steps. ``p_brake_w`` is the mechanical braking power for step
``k`` and is ignored on the last row.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_ACCEL_MPS2 = 3.0


class CycleError(ValueError):
    """Malformed or physically invalid drive-cycle data."""


@dataclass
class DriveCycle:
    velocity_mps: np.ndarray
    gradient_rad: np.ndarray
    brake_power_W: np.ndarray | None = None
    dt_s: float = 1.0

    def __post_init__(self):
        self.velocity_mps = np.asarray(self.velocity_mps, dtype=float)
        self.gradient_rad = np.asarray(self.gradient_rad, dtype=float)
        if self.brake_power_W is not None:
            self.brake_power_W = np.asarray(self.brake_power_W, dtype=float)
        self.validate()

    @property
    def n_steps(self) -> int:
        return len(self.velocity_mps) - 1

    @property
    def distance_m(self) -> float:
        return float(np.sum(self.velocity_mps[:-1]) * self.dt_s)

    def validate(self) -> None:
        v, th = self.velocity_mps, self.gradient_rad
        if self.dt_s != 1.0:
            raise CycleError("sampling interval must be 1 s")
        if v.ndim != 1 or len(v) < 2:
            raise CycleError("velocity series needs at least 2 samples")
        if th.shape != v.shape:
            raise CycleError(f"gradient length {len(th)} does not match velocity length {len(v)}")
        if self.brake_power_W is not None and len(self.brake_power_W) != len(v) - 1:
            raise CycleError(f"brake power length {len(self.brake_power_W)} must be {len(v) - 1}")
        for name, arr in (("v_mps", v), ("grade_rad", th), ("p_brake_w", self.brake_power_W)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise CycleError(f"non-finite value in {name} at row {int(np.argmax(~np.isfinite(arr)))}")
        if np.any(v < 0):
            raise CycleError(f"negative velocity at row {int(np.argmax(v < 0))}")


def load_cycle(path, grade_in_percent: bool = False) -> DriveCycle:
    """Read and validate a drive-cycle CSV.

    With ``grade_in_percent`` the grade column is read as percent grade
    (rise/run x 100) and converted to radians.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CycleError(f"cannot read cycle file {path}: {exc.strerror}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise CycleError(f"{path}: empty file") from None
    required = ["t_s", "v_mps", "grade_rad"]
    if header[:3] != required or len(header) > 4 or (len(header) == 4 and header[3] != "p_brake_w"):
        raise CycleError(f"{path}: header must be t_s,v_mps,grade_rad[,p_brake_w], got {','.join(header)}")
    rows = []
    for i, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CycleError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        vals = []
        for col, cell in zip(header, row):
            try:
                x = float(cell)
            except ValueError:
                raise CycleError(f"{path}: row {i}, column {col}: not a number: {cell!r}") from None
            if not math.isfinite(x):
                raise CycleError(f"{path}: row {i}, column {col}: non-finite value")
            vals.append(x)
        t, v = vals[0], vals[1]
        if t != len(rows):
            raise CycleError(f"{path}: row {i}, column t_s: expected {len(rows)} (1 s sampling), got {cell_repr(t)}")
        if v < 0:
            raise CycleError(f"{path}: row {i}, column v_mps: negative velocity {v}")
        rows.append(vals)
    if len(rows) < 2:
        raise CycleError(f"{path}: need at least 2 data rows")
    data = np.array(rows)
    grade = data[:, 2]
    if grade_in_percent:
        grade = np.arctan(grade / 100.0)
    brake = data[:-1, 3] if data.shape[1] == 4 else None
    return DriveCycle(velocity_mps=data[:, 1], gradient_rad=grade, brake_power_W=brake)


def cell_repr(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(x)


def write_cycle(cycle: DriveCycle, path) -> None:
    """Write ``cycle`` in the CSV schema; floats use ``repr`` so reloading is bit-exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["t_s", "v_mps", "grade_rad"]
        if cycle.brake_power_W is not None:
            cols.append("p_brake_w")
        w.writerow(cols)
        n = len(cycle.velocity_mps)
        for k in range(n):
            row = [str(k), repr(float(cycle.velocity_mps[k])), repr(float(cycle.gradient_rad[k]))]
            if cycle.brake_power_W is not None:
                row.append(repr(float(cycle.brake_power_W[k])) if k < n - 1 else "0.0")
            w.writerow(row)


# --------------------------------------------------------------------------
# synthesis

SEGMENT_KINDS = ("accelerate", "cruise", "decelerate", "stop", "hill")


@dataclass(frozen=True)
class Segment:
    kind: str
    duration_s: int
    target_mps: float = 0.0
    grade_amplitude_rad: float = 0.0


@dataclass(frozen=True)
class CycleSpec:
    segments: tuple[Segment, ...]
    rng_seed: int = 0
    noise_std_mps: float = 0.0
    base_grade_rad: float = 0.0
    duration_s: int | None = field(default=None)

    def __post_init__(self):
        total = sum(s.duration_s for s in self.segments)
        if self.duration_s is None:
            object.__setattr__(self, "duration_s", total)
        elif self.duration_s != total:
            raise CycleError(f"segment durations sum to {total}, spec says {self.duration_s}")
        for i, s in enumerate(self.segments):
            if s.kind not in SEGMENT_KINDS:
                raise CycleError(f"segment {i}: unknown kind {s.kind!r}")
            if s.duration_s < 1:
                raise CycleError(f"segment {i}: duration must be >= 1 s")
            if s.target_mps < 0:
                raise CycleError(f"segment {i}: target speed must be >= 0")


def synth_cycle(spec: CycleSpec) -> DriveCycle:
    """Render a segment plan into a 1 s velocity/grade profile.

    Speed ramps are linear with ``|dv/dt| <= 3 m/s^2`` (a ramp that cannot
    reach its target in time stops short); grade bumps are half-sine shaped
    so the profile is continuous. Noise, when requested, is applied to
    cruise-type segments and re-limited to the acceleration bound.
    """
    rng = np.random.default_rng(spec.rng_seed)
    v = [0.0]
    grade = [spec.base_grade_rad]
    noisy = []
    for seg in spec.segments:
        v0 = v[-1]
        T = seg.duration_s
        for t in range(1, T + 1):
            if seg.kind == "stop":
                vt = max(0.0, v[-1] - MAX_ACCEL_MPS2)
            elif seg.kind in ("accelerate", "decelerate"):
                want = v0 + (seg.target_mps - v0) * t / T
                vt = float(np.clip(want, v[-1] - MAX_ACCEL_MPS2, v[-1] + MAX_ACCEL_MPS2))
            else:
                vt = float(np.clip(seg.target_mps, v[-1] - MAX_ACCEL_MPS2, v[-1] + MAX_ACCEL_MPS2))
            v.append(vt)
            grade.append(spec.base_grade_rad + seg.grade_amplitude_rad * math.sin(math.pi * t / T))
            noisy.append(spec.noise_std_mps > 0 and seg.kind in ("cruise", "hill") and vt > 0)
    v = np.array(v)
    if spec.noise_std_mps > 0:
        mask = np.concatenate([[False], np.array(noisy, dtype=bool)])
        # AR(1)-smoothed speed fluctuation with stationary std noise_std_mps
        white = rng.normal(0.0, spec.noise_std_mps * math.sqrt(1 - 0.9**2), size=v.shape)
        wobble = np.zeros_like(v)
        for k in range(1, len(v)):
            wobble[k] = 0.9 * wobble[k - 1] + white[k]
        v = v + np.where(mask, wobble, 0.0)
        v = np.maximum(v, 0.0)
        for k in range(1, len(v)):
            v[k] = np.clip(v[k], v[k - 1] - MAX_ACCEL_MPS2, v[k - 1] + MAX_ACCEL_MPS2)
    return DriveCycle(velocity_mps=v, gradient_rad=np.array(grade))


def _suburban_plan(rng: np.random.Generator, target_m: float = 13_000.0) -> list[Segment]:
    # climb for the first half of the route, descend for the second
    segs: list[Segment] = [Segment("stop", 5)]
    dist = 0.0
    v = 0.0
    while dist < target_m - 800.0:
        uphill = dist < 0.5 * target_m
        speed = float(rng.choice([11.0, 14.0, 17.0, 20.0, 22.0]))
        accel = float(rng.uniform(0.5, 0.9)) * (14.0 / max(speed, 14.0))
        t_acc = max(2, int(math.ceil(abs(speed - v) / accel)))
        segs.append(Segment("accelerate", t_acc, speed))
        dist += 0.5 * (speed + v) * t_acc
        budget = target_m - 700.0 - dist - 0.5 * speed * speed
        t_cruise = int(min(rng.integers(40, 130), max(5.0, budget / speed)))
        amp = float(rng.uniform(0.045, 0.07)) if uphill else -float(rng.uniform(0.01, 0.04))
        if uphill or rng.random() < 0.7:
            segs.append(Segment("hill", t_cruise, speed, amp))
        else:
            segs.append(Segment("cruise", t_cruise, speed))
        dist += speed * t_cruise
        v = speed
        if rng.random() < 0.45:
            t_dec = max(2, int(math.ceil(v / float(rng.uniform(0.8, 1.5)))))
            segs.append(Segment("decelerate", t_dec, 0.0))
            dist += 0.5 * v * t_dec
            segs.append(Segment("stop", int(rng.integers(5, 30))))
            v = 0.0
    # finish at the target distance and come to rest
    v_end = synth_cycle(CycleSpec(tuple(segs))).velocity_mps
    remaining = target_m - float(np.sum(v_end[:-1]))
    speed = max(v, 12.0)
    if v < speed:
        t_acc = int(math.ceil((speed - v) / 0.8))
        segs.append(Segment("accelerate", t_acc, speed))
        remaining -= 0.5 * (speed + v) * t_acc
    t_dec = int(math.ceil(speed / 1.0))
    t_cruise = max(1, int(round((remaining - 0.5 * speed * t_dec) / speed)))
    segs.append(Segment("cruise", t_cruise, speed))
    segs.append(Segment("decelerate", t_dec, 0.0))
    segs.append(Segment("stop", 5))
    return segs


def preset_spec(name: str, seed: int = 0) -> CycleSpec:
    """Named synthetic cycle plans.

    ``suburban``
        ~13 km route (roughly 800 to 1000 s) climbing then descending, with stops.
    ``commute``
        the same kind of route stretched to ~18 km (roughly 1300 s).
    ``urban``
        ~4 km of stop-and-go at low speed.
    ``gentle``
        short light-load cycle the battery can cover alone (engine-off feasible).
    ``standstill``
        vehicle at rest throughout.
    """
    rng = np.random.default_rng(seed)
    if name == "suburban":
        return CycleSpec(tuple(_suburban_plan(rng)), rng_seed=seed, noise_std_mps=0.3)
    if name == "commute":
        return CycleSpec(tuple(_suburban_plan(rng, target_m=18_000.0)), rng_seed=seed, noise_std_mps=0.3)
    if name == "urban":
        segs = [Segment("stop", 5)]
        for _ in range(12):
            speed = float(rng.uniform(8.0, 14.0))
            segs += [
                Segment("accelerate", int(math.ceil(speed / 0.8)), speed),
                Segment("cruise", int(rng.integers(15, 40)), speed, 0.0),
                Segment("decelerate", int(math.ceil(speed / 1.2)), 0.0),
                Segment("stop", int(rng.integers(5, 25))),
            ]
        return CycleSpec(tuple(segs), rng_seed=seed, noise_std_mps=0.1)
    if name == "gentle":
        return CycleSpec((
            Segment("stop", 3), Segment("accelerate", 20, 12.0), Segment("cruise", 60, 12.0),
            Segment("hill", 40, 12.0, -0.01), Segment("decelerate", 12, 0.0), Segment("stop", 5),
        ), rng_seed=seed)
    if name == "standstill":
        return CycleSpec((Segment("stop", 60),), rng_seed=seed)
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("suburban", "commute", "urban", "gentle", "standstill")


def preset_cycle(name: str, seed: int = 0) -> DriveCycle:
    return synth_cycle(preset_spec(name, seed))


def concat_cycles(cycles) -> DriveCycle:
    """Drive the given cycles back to back.

    Each cycle after the first must start at the speed the previous one
    ends with; its first sample is dropped so the joint is a single row.
    """
    cycles = list(cycles)
    if not cycles:
        raise CycleError("nothing to concatenate")
    v = [cycles[0].velocity_mps]
    th = [cycles[0].gradient_rad]
    brake = [cycles[0].brake_power_W]
    for prev, cyc in zip(cycles, cycles[1:]):
        if cyc.velocity_mps[0] != prev.velocity_mps[-1]:
            raise CycleError("consecutive cycles must meet at the same speed")
        v.append(cyc.velocity_mps[1:])
        th.append(cyc.gradient_rad[1:])
        brake.append(cyc.brake_power_W)
    if all(b is None for b in brake):
        b_all = None
    else:
        b_all = np.concatenate([b if b is not None else np.zeros(c.n_steps) for b, c in zip(brake, cycles)])
    return DriveCycle(velocity_mps=np.concatenate(v), gradient_rad=np.concatenate(th), brake_power_W=b_all)
