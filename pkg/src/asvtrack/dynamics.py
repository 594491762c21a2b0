"""3-DOF surge/sway/yaw model of the four-thruster vessel.

State vector ``q = [x, y, psi, u, v, w]``: inertial position and heading,
then body-frame surge, sway and yaw rate. Control ``f = [f1, f2, f3, f4]``
holds the left, right, anterior and rear thruster forces in newtons.

    eta_dot = T(psi) nu
    nu_dot  = M^-1 (tau + tau_env) - M^-1 (C(nu) + D) nu
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config

STATE_DIM = 6
ACTION_DIM = 4


class ModelExplosionError(RuntimeError):
    """Integration produced a non-finite state."""


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    if isinstance(angle, (float, int, np.floating)):
        a = float(angle)
        if -math.pi < a <= math.pi:
            return a
        return math.pi - (math.pi - a) % (2.0 * math.pi)
    angle = np.asarray(angle, dtype=float)
    # in-range values pass through untouched so wrapping never adds rounding
    inside = (angle > -np.pi) & (angle <= np.pi)
    wrapped = np.where(inside, angle, np.pi - np.mod(np.pi - angle, 2.0 * np.pi))
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def angle_diff(a, b):
    """Wrapped difference ``a - b`` in (-pi, pi]."""
    return wrap_angle(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


@dataclass(frozen=True)
class VesselState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    u: float = 0.0
    v: float = 0.0
    w: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(getattr(self, f.name)) for f in fields(self)):
            raise ValueError(f"non-finite vessel state: {self}")
        object.__setattr__(self, "psi", wrap_angle(self.psi))

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.u, self.v, self.w])

    @classmethod
    def from_array(cls, q) -> "VesselState":
        return cls(*(float(value) for value in q))


@dataclass(frozen=True)
class ModelParameters:
    """Identified hull parameters plus thruster geometry.

    ``a`` and ``b`` default to the hull beam and length; ``f_max`` bounds each
    thruster. ``dt`` is the control/integration period.
    """

    m11: float = 12.0
    m22: float = 24.0
    m33: float = 1.5
    d11: float = 6.0
    d22: float = 8.0
    d33: float = 1.35
    a: float = 0.45
    b: float = 0.90
    f_max: float = 4.0
    dt: float = 0.1

    def __post_init__(self):
        for name in ("m11", "m22", "m33", "d11", "d22", "d33", "a", "b", "f_max", "dt"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"model parameter {name} must be positive, got {value}")

    @property
    def mass(self) -> np.ndarray:
        return np.diag([self.m11, self.m22, self.m33])

    @property
    def damping(self) -> np.ndarray:
        return np.diag([self.d11, self.d22, self.d33])

    @property
    def allocation_matrix(self) -> np.ndarray:
        half_a, half_b = 0.5 * self.a, 0.5 * self.b
        return np.array([
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [half_a, -half_a, half_b, -half_b],
        ])

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values) -> "ModelParameters":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown model parameter(s): {sorted(unknown)}")
        try:
            return cls(**{k: float(v) for k, v in values.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "ModelParameters":
        """Load from a key-value file with keys m11 ... f_max, dt."""
        return cls.from_mapping(load_config(path))


def rotation_to_inertial(psi: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def coriolis(params: ModelParameters, vel) -> np.ndarray:
    u, v, _ = vel
    return np.array([
        [0.0, 0.0, -params.m22 * v],
        [0.0, 0.0, params.m11 * u],
        [params.m22 * v, -params.m11 * u, 0.0],
    ])


def allocate(params: ModelParameters, cmd) -> np.ndarray:
    """Body wrench ``[tau_u, tau_v, tau_w]`` produced by the four thrusters."""
    f1, f2, f3, f4 = cmd
    return np.array([
        f1 + f2,
        f3 + f4,
        0.5 * params.a * (f1 - f2) + 0.5 * params.b * (f3 - f4),
    ])


def saturate(params: ModelParameters, cmd) -> np.ndarray:
    return np.clip(np.asarray(cmd, dtype=float), -params.f_max, params.f_max)


def _derivative(params: ModelParameters, q: np.ndarray, tau: np.ndarray) -> np.ndarray:
    # tau already includes the environmental wrench
    _, _, psi, u, v, w = q
    if not math.isfinite(psi):
        raise ModelExplosionError(f"non-finite heading in {q}")
    c, s = math.cos(psi), math.sin(psi)
    return np.array([
        c * u - s * v,
        s * u + c * v,
        w,
        (tau[0] + params.m22 * v * w - params.d11 * u) / params.m11,
        (tau[1] - params.m11 * u * w - params.d22 * v) / params.m22,
        (tau[2] - (params.m22 - params.m11) * u * v - params.d33 * w) / params.m33,
    ])


def state_derivative(params: ModelParameters, state, cmd, tau_env=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Time derivative of ``q`` under thrust ``cmd`` and disturbance ``tau_env``."""
    q = np.asarray(state, dtype=float)
    tau = allocate(params, cmd) + np.asarray(tau_env, dtype=float)
    with np.errstate(all="ignore"):
        qdot = _derivative(params, q, tau)
    if not np.all(np.isfinite(qdot)):
        raise ModelExplosionError(f"non-finite derivative at q={q}, tau={tau}")
    return qdot


def derivative_jacobians(params: ModelParameters, state) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of the state derivative w.r.t. ``q`` (6x6) and ``f`` (6x4).

    The dynamics are affine in the control, so the control Jacobian does not
    depend on the command.
    """
    return _state_jacobian(params, state), _control_jacobian(params).copy()


def _state_jacobian(params: ModelParameters, state) -> np.ndarray:
    _, _, psi, u, v, w = state
    m11, m22, m33 = params.m11, params.m22, params.m33
    c, s = math.cos(psi), math.sin(psi)
    return np.array([
        [0.0, 0.0, -s * u - c * v, c, -s, 0.0],
        [0.0, 0.0, c * u - s * v, s, c, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, -params.d11 / m11, m22 * w / m11, m22 * v / m11],
        [0.0, 0.0, 0.0, -m11 * w / m22, -params.d22 / m22, -m11 * u / m22],
        [0.0, 0.0, 0.0, -(m22 - m11) * v / m33, -(m22 - m11) * u / m33, -params.d33 / m33],
    ])


@functools.lru_cache(maxsize=32)
def _control_jacobian(params: ModelParameters) -> np.ndarray:
    jac_f = np.zeros((6, 4))
    jac_f[3:, :] = params.allocation_matrix / np.array([[params.m11], [params.m22], [params.m33]])
    return jac_f


def _check(q: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(q)):
        raise ModelExplosionError(f"non-finite state after integration: {q}")
    return q


def step_rk4(params: ModelParameters, state, cmd, tau_env=(0.0, 0.0, 0.0), dt: float | None = None) -> np.ndarray:
    """One classical RK4 step with ``cmd`` and ``tau_env`` held constant.

    Returns the new state array with the heading wrapped to (-pi, pi].
    """
    h = params.dt if dt is None else dt
    if not h > 0:
        raise ValueError(f"dt must be positive, got {h}")
    q = np.asarray(state, dtype=float)
    tau = allocate(params, cmd) + np.asarray(tau_env, dtype=float)
    with np.errstate(all="ignore"):
        k1 = _derivative(params, q, tau)
        k2 = _derivative(params, q + 0.5 * h * k1, tau)
        k3 = _derivative(params, q + 0.5 * h * k2, tau)
        k4 = _derivative(params, q + h * k3, tau)
        q_next = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    q_next[2] = wrap_angle(q_next[2])
    return _check(q_next)


def step_rk4_with_jacobians(params: ModelParameters, state, cmd, dt: float | None = None):
    """RK4 step (no disturbance) plus its exact Jacobians w.r.t. state and command."""
    h = params.dt if dt is None else dt
    q = np.asarray(state, dtype=float)
    tau = allocate(params, cmd)
    eye = np.eye(6)
    b_c = _control_jacobian(params)

    k_prev = None
    dq_prev = df_prev = None
    k_sum = np.zeros(6)
    jq_sum = np.zeros((6, 6))
    jf_sum = np.zeros((6, 4))
    for scale, weight in ((0.0, 1.0), (0.5, 2.0), (0.5, 2.0), (1.0, 1.0)):
        if k_prev is None:
            point = q
        else:
            point = q + scale * h * k_prev
        k = _derivative(params, point, tau)
        a_c = _state_jacobian(params, point)
        if dq_prev is None:
            dk_dq, dk_df = a_c, b_c
        else:
            dk_dq = a_c @ (eye + scale * h * dq_prev)
            dk_df = a_c @ (scale * h * df_prev) + b_c
        k_sum += weight * k
        jq_sum += weight * dk_dq
        jf_sum += weight * dk_df
        k_prev, dq_prev, df_prev = k, dk_dq, dk_df

    q_next = q + (h / 6.0) * k_sum
    q_next[2] = wrap_angle(q_next[2])
    return _check(q_next), eye + (h / 6.0) * jq_sum, (h / 6.0) * jf_sum


def kinetic_energy(params: ModelParameters, state) -> float:
    _, _, _, u, v, w = state
    return 0.5 * (params.m11 * u * u + params.m22 * v * v + params.m33 * w * w)
