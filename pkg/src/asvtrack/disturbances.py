"""Wind, wave and current disturbances acting on the vessel.

Each process owns its state and advances with Euler-Maruyama at the
simulation step. Randomness comes from per-process generators spawned from
one scenario seed, so switching a process on or off never shifts the noise
seen by the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, section
from .dynamics import ModelParameters, coriolis

KNOT = 0.514444


@dataclass
class WindModel:
    """Quadratic wind load with low-order coefficient shapes.

    C_X = -cx cos(gamma), C_Y = cy sin(gamma), C_N = cn sin(2 gamma), where
    gamma is the relative wind angle of attack.
    """

    speed: float = 4 * KNOT
    direction: float = 0.0
    rho_a: float = 1.225
    frontal_area: float = 0.045
    lateral_area: float = 0.09
    length: float = 0.9
    cx: float = 0.7
    cy: float = 0.7
    cn: float = 0.125
    enabled: bool = True

    def __post_init__(self):
        if self.speed < 0:
            raise ConfigError("wind speed must be >= 0")
        if min(self.frontal_area, self.lateral_area, self.length) <= 0:
            raise ConfigError("wind areas and length must be positive")


def wind_wrench(model: WindModel, state) -> np.ndarray:
    if not model.enabled:
        return np.zeros(3)
    _, _, psi, u, v, _ = state
    rel = model.direction - psi
    u_rw = u - model.speed * math.cos(rel)
    v_rw = v - model.speed * math.sin(rel)
    speed_sq = u_rw * u_rw + v_rw * v_rw
    if speed_sq == 0.0:
        return np.zeros(3)
    gamma = -math.atan2(v_rw, u_rw)
    q_dyn = 0.5 * model.rho_a * speed_sq
    return q_dyn * np.array([
        -model.cx * math.cos(gamma) * model.frontal_area,
        model.cy * math.sin(gamma) * model.lateral_area,
        model.cn * math.sin(2.0 * gamma) * model.lateral_area * model.length,
    ])


@dataclass
class WaveModel:
    """Second-order shaping filters for wave force and moment plus slow drift.

    For each channel: ``x1' = x2``, ``x2' = -omega_e^2 x1 - 2 lambda_w omega_e x2
    + gain * noise``; output ``x2 + drift`` with ``drift' = drift_sigma * noise``.
    The force acts along ``direction`` and both outputs are clipped to their caps.
    """

    omega_e: float = 1.2
    lambda_w: float = 0.1
    gain: float = 0.25
    moment_gain: float = 0.05
    drift_sigma: float = 0.01
    direction: float = 0.0
    force_cap: float = 1.0
    moment_cap: float = 0.3
    enabled: bool = True
    xf: np.ndarray = field(default_factory=lambda: np.zeros(2))
    xn: np.ndarray = field(default_factory=lambda: np.zeros(2))
    drift_f: float = 0.0
    drift_n: float = 0.0

    def __post_init__(self):
        if self.omega_e <= 0 or self.lambda_w <= 0 or self.gain < 0:
            raise ConfigError("wave model needs omega_e > 0, lambda_w > 0, gain >= 0")

    @property
    def oscillatory_force(self) -> float:
        return float(self.xf[1])


def _filter_step(x, omega, zeta, gain, dt, xi):
    # semi-implicit Euler-Maruyama: velocity first, then position with the new velocity
    x2 = x[1] + (-omega * omega * x[0] - 2.0 * zeta * omega * x[1]) * dt + gain * math.sqrt(dt) * xi
    x1 = x[0] + x2 * dt
    return np.array([x1, x2])


def wave_step(model: WaveModel, state, dt: float, rng: np.random.Generator):
    """Advance the wave filters by ``dt``; returns ``(model, body wrench)``.

    The model is updated in place and returned for convenience.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    xi = rng.standard_normal(4)
    if not model.enabled:
        return model, np.zeros(3)
    model.xf = _filter_step(model.xf, model.omega_e, model.lambda_w, model.gain, dt, xi[0])
    model.xn = _filter_step(model.xn, model.omega_e, model.lambda_w, model.moment_gain, dt, xi[1])
    model.drift_f += model.drift_sigma * math.sqrt(dt) * xi[2]
    model.drift_n += model.drift_sigma * math.sqrt(dt) * xi[3]
    force = min(max(model.xf[1] + model.drift_f, -model.force_cap), model.force_cap)
    moment = min(max(model.xn[1] + model.drift_n, -model.moment_cap), model.moment_cap)
    rel = model.direction - state[2]
    return model, np.array([force * math.cos(rel), force * math.sin(rel), moment])


@dataclass
class CurrentModel:
    """First-order Gauss-Markov current speed ``V' + mu V = noise`` along ``direction``."""

    mu: float = 0.05
    sigma: float = 0.03
    direction: float = 0.0
    speed: float = 0.1
    cap: float | None = 0.2
    enabled: bool = True

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigError("current mu must be positive")
        if self.cap is not None and self.cap < 0:
            raise ConfigError("current cap must be >= 0")
        if self.cap is not None:
            self.speed = min(max(self.speed, 0.0), self.cap)


def current_step(model: CurrentModel, dt: float, rng: np.random.Generator, psi: float = 0.0):
    """Advance the current speed; returns ``(model, body-frame current velocity)``.

    With ``cap=None`` the speed is left unclamped (pure Ornstein-Uhlenbeck).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    xi = rng.standard_normal()
    if not model.enabled:
        return model, np.zeros(3)
    speed = model.speed - model.mu * model.speed * dt + model.sigma * math.sqrt(dt) * xi
    if model.cap is not None:
        speed = min(max(speed, 0.0), model.cap)
    model.speed = speed
    rel = model.direction - psi
    return model, np.array([speed * math.cos(rel), speed * math.sin(rel), 0.0])


def current_wrench(params: ModelParameters, v_c) -> np.ndarray:
    v_c = np.asarray(v_c, dtype=float)
    return (coriolis(params, v_c) + params.damping) @ v_c


@dataclass
class Disturbances:
    """Wind, wave and current processes with their own noise streams."""

    wind: WindModel = field(default_factory=lambda: WindModel(enabled=False))
    wave: WaveModel = field(default_factory=lambda: WaveModel(enabled=False))
    current: CurrentModel = field(default_factory=lambda: CurrentModel(enabled=False))
    seed: int = 0
    rngs: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.rngs is None:
            self.reseed(self.seed)

    def reseed(self, seed) -> None:
        self.seed = seed
        children = np.random.SeedSequence(seed).spawn(2)
        self.rngs = [np.random.default_rng(child) for child in children]

    @property
    def active(self) -> bool:
        return self.wind.enabled or self.wave.enabled or self.current.enabled

    def step(self, params: ModelParameters, state, dt: float) -> np.ndarray:
        """Advance all processes and return tau_env for the coming step."""
        return total_env_wrench(self.wind, self.wave, self.current, params, state, dt, self.rngs)[1]


def total_env_wrench(wind, wave, current, params, state, dt, rngs):
    """Sum of wind, wave and current loads; returns ``((wind, wave, current), tau_env)``.

    ``rngs`` holds the wave and current generators, in that order.
    """
    wave_rng, current_rng = rngs
    tau = wind_wrench(wind, state)
    wave, tau_wave = wave_step(wave, state, dt, wave_rng)
    current, v_c = current_step(current, dt, current_rng, state[2])
    return (wind, wave, current), tau + tau_wave + current_wrench(params, v_c)


def _angle_deg(cfg, key, default_rad):
    return math.radians(float(cfg[key])) if key in cfg else default_rad


def scenario_from_config(flat: dict, seed: int | None = None) -> Disturbances:
    """Build a scenario from keys ``wind.*``, ``wave.*``, ``current.*``, ``seed``.

    A process is enabled when its section is present (override with
    ``<process>.enabled``).
    """
    wind_cfg, wave_cfg, cur_cfg = section(flat, "wind"), section(flat, "wave"), section(flat, "current")
    wind = WindModel(
        speed=float(wind_cfg.get("speed_knots", 4.0)) * KNOT,
        direction=_angle_deg(wind_cfg, "direction_deg", 0.0),
        enabled=bool(wind_cfg.get("enabled", bool(wind_cfg))),
    )
    wave = WaveModel(
        omega_e=float(wave_cfg.get("omega_e", 1.2)),
        lambda_w=float(wave_cfg.get("lambda", 0.1)),
        gain=float(wave_cfg.get("gain", 0.25)),
        moment_gain=float(wave_cfg.get("moment_gain", 0.05)),
        drift_sigma=float(wave_cfg.get("drift_sigma", 0.01)),
        direction=_angle_deg(wave_cfg, "direction_deg", 0.0),
        force_cap=float(wave_cfg.get("cap_N", 1.0)),
        moment_cap=float(wave_cfg.get("moment_cap_Nm", 0.3)),
        enabled=bool(wave_cfg.get("enabled", bool(wave_cfg))),
    )
    cap = cur_cfg.get("cap_mps", 0.2)
    current = CurrentModel(
        mu=float(cur_cfg.get("mu", 0.05)),
        sigma=float(cur_cfg.get("sigma", 0.03)),
        direction=_angle_deg(cur_cfg, "direction_deg", 0.0),
        speed=float(cur_cfg.get("initial_mps", 0.1)),
        cap=None if cap is None else float(cap),
        enabled=bool(cur_cfg.get("enabled", bool(cur_cfg))),
    )
    if seed is None:
        seed = int(flat.get("seed", 0))
    return Disturbances(wind=wind, wave=wave, current=current, seed=seed)


def default_scenario(seed: int = 0) -> Disturbances:
    """The evaluation scenario: 4 kn wind, waves capped at 1 N, currents up to 0.2 m/s."""
    return Disturbances(
        wind=WindModel(direction=math.radians(45.0)),
        wave=WaveModel(direction=math.radians(120.0)),
        current=CurrentModel(direction=math.radians(-60.0)),
        seed=seed,
    )
