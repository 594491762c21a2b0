"""Reference trajectories and line-of-sight (LOS) sight heading."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError
from .dynamics import wrap_angle

KINDS = ("sinusoid", "line", "c_curve")
_TIME_SLACK = 1e-9


@dataclass(frozen=True)
class ReferenceSample:
    x_d: float
    y_d: float
    psi_d: float
    u_d: float
    v_d: float
    w_d: float
    tangent: float

    def state(self) -> np.ndarray:
        """Desired state ``[x_d, y_d, psi_d, u_d, v_d, w_d]``."""
        return np.array([self.x_d, self.y_d, self.psi_d, self.u_d, self.v_d, self.w_d])


@dataclass(frozen=True)
class TrajectorySpec:
    """Analytic reference path traversed in time.

    ``sinusoid``: advances ``speed * t`` along the axis ``heading`` with a lateral
    offset ``amplitude * sin(2 pi s / period + phase)``. ``line``: the same with
    zero amplitude. ``c_curve``: constant-curvature arc of ``radius`` travelled
    at ``speed`` (counter-clockwise for positive radius). ``origin`` is the
    start point.
    """

    kind: str = "sinusoid"
    amplitude: float = 1.0
    period: float = 8.0
    speed: float = 0.3
    duration: float = 30.0
    heading: float = 0.0
    phase: float = 0.0
    radius: float = 3.0
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown trajectory kind {self.kind!r}")
        if not self.duration > 0 or not self.speed > 0 or self.amplitude < 0:
            raise ConfigError("trajectory needs duration > 0, speed > 0, amplitude >= 0")
        if self.kind == "sinusoid" and not self.period > 0:
            raise ConfigError("sinusoid period must be positive")
        if self.kind == "c_curve" and self.radius == 0:
            raise ConfigError("c_curve radius must be non-zero")

    def as_dict(self) -> dict:
        out = asdict(self)
        out["origin"] = list(self.origin)
        return out

    def _local(self, t):
        """Position, velocity and acceleration in the path's own frame."""
        s = self.speed
        if self.kind == "c_curve":
            r = self.radius
            angle = s * t / r
            pos = (r * math.sin(angle), r * (1.0 - math.cos(angle)))
            vel = (s * math.cos(angle), s * math.sin(angle))
            acc = (-s * s / r * math.sin(angle), s * s / r * math.cos(angle))
            return pos, vel, acc
        amp = self.amplitude if self.kind == "sinusoid" else 0.0
        k = 2.0 * math.pi / self.period if self.kind == "sinusoid" else 0.0
        arg = k * s * t + self.phase
        pos = (s * t, amp * (math.sin(arg) - math.sin(self.phase)))
        vel = (s, amp * k * s * math.cos(arg))
        acc = (0.0, -amp * k * k * s * s * math.sin(arg))
        return pos, vel, acc

    def sample(self, t: float) -> ReferenceSample:
        if not (-_TIME_SLACK <= t <= self.duration + _TIME_SLACK):
            raise ValueError(f"t={t} outside [0, {self.duration}]")
        (px, py), (vx, vy), (ax, ay) = self._local(t)
        c, s = math.cos(self.heading), math.sin(self.heading)
        speed_sq = vx * vx + vy * vy
        tangent = wrap_angle(self.heading + math.atan2(vy, vx))
        return ReferenceSample(
            x_d=self.origin[0] + c * px - s * py,
            y_d=self.origin[1] + s * px + c * py,
            psi_d=tangent,
            u_d=math.sqrt(speed_sq),
            v_d=0.0,
            w_d=(vx * ay - vy * ax) / speed_sq,
            tangent=tangent,
        )


@dataclass
class TabulatedTrajectory:
    """Reference given as timestamped rows, linearly interpolated.

    The path tangent is taken as the reference heading.
    """

    times: np.ndarray
    rows: np.ndarray  # (n, 6): x_d, y_d, psi_d, u_d, v_d, w_d
    name: str = field(default="tabulated")

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.rows = np.asarray(self.rows, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 2 or np.any(np.diff(self.times) <= 0):
            raise ConfigError("reference times must be strictly increasing with >= 2 rows")
        if self.rows.shape != (len(self.times), 6):
            raise ConfigError("reference rows must have 6 columns")

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def as_dict(self) -> dict:
        return {"kind": "tabulated", "name": self.name, "rows": len(self.times)}

    def sample(self, t: float) -> ReferenceSample:
        if not (-_TIME_SLACK <= t <= self.duration + _TIME_SLACK):
            raise ValueError(f"t={t} outside [0, {self.duration}]")
        tt = self.times[0] + min(max(t, 0.0), self.duration)
        values = [np.interp(tt, self.times, self.rows[:, j]) for j in range(6)]
        # interpolate heading on the unwrapped sequence
        values[2] = wrap_angle(np.interp(tt, self.times, np.unwrap(self.rows[:, 2])))
        return ReferenceSample(*values, tangent=values[2])


def load_reference_csv(path) -> TabulatedTrajectory:
    """Read a CSV with header ``t, x_d, y_d, psi_d, u_d, v_d, w_d``."""
    path = Path(path)
    columns = ["t", "x_d", "y_d", "psi_d", "u_d", "v_d", "w_d"]
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(columns) - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"{path}: missing columns {sorted(missing)}")
        data = np.array([[float(row[c]) for c in columns] for row in reader])
    if data.ndim != 2 or len(data) < 2:
        raise ConfigError(f"{path}: need at least two reference rows")
    return TabulatedTrajectory(data[:, 0], data[:, 1:], name=path.stem)


def sample(spec, t: float) -> ReferenceSample:
    return spec.sample(t)


def sight_heading(spec, t: float, current_pos, lookahead: float = 0.9) -> float:
    """Bearing from the vessel to a point ``lookahead`` ahead of the reference along its tangent."""
    if not lookahead > 0:
        raise ValueError("lookahead must be positive")
    ref = spec.sample(t)
    return sight_heading_from(ref, current_pos, lookahead)


def sight_heading_from(ref: ReferenceSample, current_pos, lookahead: float = 0.9) -> float:
    xs = ref.x_d + lookahead * math.cos(ref.tangent)
    ys = ref.y_d + lookahead * math.sin(ref.tangent)
    dx, dy = xs - current_pos[0], ys - current_pos[1]
    if math.hypot(dx, dy) < 1e-12:
        return ref.tangent
    return wrap_angle(math.atan2(dy, dx))


@dataclass(frozen=True)
class TrainingRanges:
    amplitude: tuple = (0.5, 2.0)
    period: tuple = (4.0, 12.0)
    speed: tuple = (0.2, 0.5)
    duration: float = 30.0
    # rejection limits keeping draws within the vessel's reach
    max_path_speed: float = 0.8
    max_curvature: float = 2.0
    random_heading: bool = True
    random_phase: bool = True


def _feasible(spec: TrajectorySpec, ranges: TrainingRanges) -> bool:
    k = 2.0 * math.pi / spec.period
    peak_speed = spec.speed * math.sqrt(1.0 + (spec.amplitude * k) ** 2)
    return peak_speed <= ranges.max_path_speed and spec.amplitude * k * k <= ranges.max_curvature


def training_sampler(rng: np.random.Generator, ranges: TrainingRanges = TrainingRanges(), max_tries: int = 1000):
    """Draw a random training sinusoid, uniform over the configured ranges.

    Draws whose peak path speed or curvature exceed the rejection limits are
    redrawn; if no feasible draw is found the last one is returned.
    """
    for _ in range(max_tries):
        draws = rng.uniform(size=5)
        spec = TrajectorySpec(
            kind="sinusoid",
            amplitude=ranges.amplitude[0] + draws[0] * (ranges.amplitude[1] - ranges.amplitude[0]),
            period=ranges.period[0] + draws[1] * (ranges.period[1] - ranges.period[0]),
            speed=ranges.speed[0] + draws[2] * (ranges.speed[1] - ranges.speed[0]),
            duration=ranges.duration,
            heading=float(wrap_angle(math.pi * (2 * draws[3] - 1))) if ranges.random_heading else 0.0,
            phase=2 * math.pi * draws[4] if ranges.random_phase else 0.0,
        )
        if _feasible(spec, ranges):
            return spec
    return spec


def trajectory_from_config(cfg: dict) -> TrajectorySpec | TabulatedTrajectory:
    """Build a trajectory from ``trajectory.*`` keys (already stripped of the prefix)."""
    if "csv" in cfg:
        return load_reference_csv(cfg["csv"])
    kwargs = {}
    for key in ("amplitude", "period", "speed", "duration", "phase", "radius"):
        if key in cfg:
            kwargs[key] = float(cfg[key])
    if "heading_deg" in cfg:
        kwargs["heading"] = math.radians(float(cfg["heading_deg"]))
    if "origin" in cfg:
        kwargs["origin"] = tuple(float(v) for v in cfg["origin"])
    return TrajectorySpec(kind=cfg.get("kind", "sinusoid"), **kwargs)
