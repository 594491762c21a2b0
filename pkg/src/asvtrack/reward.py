"""Five-term tracking reward with an out-of-bounds penalty."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .config import ConfigError
from .dynamics import angle_diff


@dataclass(frozen=True)
class RewardParams:
    mu: float = 3.0
    k1: float = 4.0
    k2: float = 3.0
    k3: float = 1.0
    k4: float = 0.033
    k5: float = 0.017
    lambda1: float = 1.5
    lambda2: float = 0.5
    lambda3: float = 1.0
    lambda4: float = 0.5
    lambda5: float = 0.2
    e_bound: float = 1.0
    boundary_penalty: float = -25.0
    # False reproduces the literal signed sum of thrust changes
    absolute_action_change: bool = True

    def __post_init__(self):
        if min(self.mu, self.k1, self.k2, self.k3, self.k4, self.k5) < 0 or self.e_bound <= 0:
            raise ConfigError("reward gains must be >= 0 and e_bound > 0")
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5) < 0:
            raise ConfigError("reward weights must be >= 0")

    @classmethod
    def simple(cls, **overrides) -> "RewardParams":
        """Position and heading terms only (the ablation baseline)."""
        return cls(**{"lambda3": 0.0, "lambda4": 0.0, "lambda5": 0.0, **overrides})

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values) -> "RewardParams":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown reward parameter(s): {sorted(unknown)}")
        return cls(**values)


@dataclass(frozen=True)
class RewardBreakdown:
    r_p: float
    r_psi: float
    r_w: float
    r_a: float
    r_e: float
    total: float
    out_of_bounds: bool
    e_p: float = 0.0


def position_reward(e_p: float, e_v: float, params: RewardParams = RewardParams()) -> float:
    return 2.0 ** (-params.k1 * (params.mu * abs(e_v) + 1.0) * e_p) - 1.0


def heading_reward(psi: float, psi_s: float, params: RewardParams = RewardParams()) -> float:
    err = abs(angle_diff(psi, psi_s))
    if err <= 0.5 * math.pi:
        return math.exp(-params.k2 * err)
    return -math.exp(params.k2 * (err - math.pi))


def yaw_rate_reward(w: float, w_d: float, params: RewardParams = RewardParams()) -> float:
    return math.exp(-params.k3 * abs(w - w_d)) - 1.0


def action_change(cmd, prev_cmd, absolute: bool = True) -> float:
    delta = np.asarray(cmd, dtype=float) - np.asarray(prev_cmd, dtype=float)
    return float(np.sum(np.abs(delta)) if absolute else np.sum(delta))


def action_smoothness_reward(cmd, prev_cmd, params: RewardParams = RewardParams()) -> float:
    return math.exp(-params.k4 * action_change(cmd, prev_cmd, params.absolute_action_change)) - 1.0


def energy_reward(cmd, params: RewardParams = RewardParams()) -> float:
    energy = float(np.sum(np.square(cmd)))
    return math.exp(-params.k5 * energy) - 1.0


def total_reward(state, reference, psi_s: float, cmd, prev_cmd, params: RewardParams = RewardParams()) -> RewardBreakdown:
    """Weighted reward for arriving at ``state`` after applying ``cmd``.

    ``reference`` is the desired state ``[x_d, y_d, psi_d, u_d, v_d, w_d]``.
    Outside the error bound the total collapses to the boundary penalty.
    """
    x, y, psi, u, v, w = state
    x_d, y_d, _, u_d, v_d, w_d = reference
    e_p = math.hypot(x - x_d, y - y_d)
    e_v = math.hypot(u - u_d, v - v_d)
    r_p = position_reward(e_p, e_v, params)
    r_psi = heading_reward(psi, psi_s, params)
    r_w = yaw_rate_reward(w, w_d, params)
    r_a = action_smoothness_reward(cmd, prev_cmd, params)
    r_e = energy_reward(cmd, params)
    if e_p > params.e_bound:
        return RewardBreakdown(r_p, r_psi, r_w, r_a, r_e, params.boundary_penalty, True, e_p)
    total = (params.lambda1 * r_p + params.lambda2 * r_psi + params.lambda3 * r_w
             + params.lambda4 * r_a + params.lambda5 * r_e)
    return RewardBreakdown(r_p, r_psi, r_w, r_a, r_e, total, False, e_p)


def reward_batch(states, references, psi_s, cmds, prev_cmds, params: RewardParams = RewardParams()) -> dict:
    """Vectorised ``total_reward`` over leading batch axes; returns arrays keyed by component."""
    q = np.asarray(states, dtype=float)
    qd = np.asarray(references, dtype=float)
    cmds = np.asarray(cmds, dtype=float)
    delta = cmds - np.asarray(prev_cmds, dtype=float)
    e_p = np.hypot(q[..., 0] - qd[..., 0], q[..., 1] - qd[..., 1])
    e_v = np.hypot(q[..., 3] - qd[..., 3], q[..., 4] - qd[..., 4])
    r_p = np.power(2.0, -params.k1 * (params.mu * e_v + 1.0) * e_p) - 1.0
    err = np.abs(angle_diff(q[..., 2], np.asarray(psi_s, dtype=float)))
    r_psi = np.where(err <= 0.5 * math.pi, np.exp(-params.k2 * err), -np.exp(params.k2 * (err - math.pi)))
    r_w = np.exp(-params.k3 * np.abs(q[..., 5] - qd[..., 5])) - 1.0
    change = np.sum(np.abs(delta), axis=-1) if params.absolute_action_change else np.sum(delta, axis=-1)
    r_a = np.exp(-params.k4 * change) - 1.0
    r_e = np.exp(-params.k5 * np.sum(cmds * cmds, axis=-1)) - 1.0
    out = e_p > params.e_bound
    total = (params.lambda1 * r_p + params.lambda2 * r_psi + params.lambda3 * r_w
             + params.lambda4 * r_a + params.lambda5 * r_e)
    total = np.where(out, params.boundary_penalty, total)
    return {"r_p": r_p, "r_psi": r_psi, "r_w": r_w, "r_a": r_a, "r_e": r_e,
            "total": total, "out_of_bounds": out, "e_p": e_p}
