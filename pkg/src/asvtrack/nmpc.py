"""Receding-horizon NMPC baseline: single shooting with projected Gauss-Newton.

The controller sees the nominal model only; disturbances stay unmodelled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .config import ConfigError
from .dynamics import ModelExplosionError, ModelParameters, angle_diff, step_rk4, step_rk4_with_jacobians

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NmpcConfig:
    horizon: int = 20
    dt: float = 0.1
    w_position: float = 10.0
    w_heading: float = 1.0
    w_velocity: float = 0.5
    w_control: float = 0.05
    w_rate: float = 0.1
    f_max: float = 4.0
    max_iter: int = 30
    # stop on projected gradient norm or on a max-norm control update below step_tolerance [N]
    tolerance: float = 1e-9
    step_tolerance: float = 1e-11
    # Levenberg damping added to the Gauss-Newton normal matrix
    damping: float = 1e-9
    max_backtracks: int = 30

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0 or self.max_iter < 1:
            raise ConfigError("NMPC needs horizon >= 1, dt > 0, max_iter >= 1")
        if min(self.w_position, self.w_heading, self.w_velocity, self.w_control, self.w_rate) < 0:
            raise ConfigError("NMPC weights must be >= 0")
        if self.tolerance <= 0 or self.f_max <= 0:
            raise ConfigError("NMPC tolerance and f_max must be positive")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values) -> "NmpcConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown NMPC parameter(s): {sorted(unknown)}")
        return cls(**values)

    @property
    def state_weights(self) -> np.ndarray:
        return np.array([self.w_position, self.w_position, self.w_heading,
                         self.w_velocity, self.w_velocity, self.w_velocity])


class SolverAbort(RuntimeError):
    """The linearisation produced non-finite values."""


@dataclass
class SolveResult:
    controls: np.ndarray
    cost: float
    iterations: int
    grad_norm: float
    converged: bool
    costs: list = field(default_factory=list)

    @property
    def hit_iteration_cap(self) -> bool:
        return not self.converged


def predict(params: ModelParameters, state, controls, dt: float | None = None) -> np.ndarray:
    """Roll the nominal model through ``controls`` (shape ``(Np, 4)``); returns ``Np + 1`` states."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    out = np.empty((len(controls) + 1, 6))
    out[0] = state
    for k, u in enumerate(controls):
        out[k + 1] = step_rk4(params, out[k], u, dt=dt)
    return out


def _residuals(config: NmpcConfig, states, controls, reference, prev_control):
    """Stacked weighted residuals; the objective is their squared norm."""
    sw = np.sqrt(config.state_weights)
    err = states[1:] - reference
    err[:, 2] = angle_diff(states[1:, 2], reference[:, 2])
    rate = np.diff(np.vstack([prev_control, controls]), axis=0)
    return np.concatenate([
        (err * sw).ravel(),
        math.sqrt(config.w_control) * controls.ravel(),
        math.sqrt(config.w_rate) * rate.ravel(),
    ])


def objective(config: NmpcConfig, params: ModelParameters, state, controls, reference, prev_control) -> float:
    controls = np.asarray(controls, dtype=float).reshape(config.horizon, 4)
    states = predict(params, state, controls, config.dt)
    r = _residuals(config, states, controls, np.asarray(reference, dtype=float), np.asarray(prev_control, dtype=float))
    return float(r @ r)


def _linearise(config: NmpcConfig, params: ModelParameters, state, controls, reference, prev_control):
    """Residuals and their Jacobian with respect to the flattened control sequence."""
    n = config.horizon
    nu = 4 * n
    states = np.empty((n + 1, 6))
    states[0] = state
    sens = np.zeros((n + 1, 6, nu))
    for k in range(n):
        states[k + 1], a_k, b_k = step_rk4_with_jacobians(params, states[k], controls[k], config.dt)
        sens[k + 1] = a_k @ sens[k]
        sens[k + 1][:, 4 * k:4 * k + 4] += b_k
    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(sens))):
        raise SolverAbort("non-finite prediction or sensitivity")
    r = _residuals(config, states, controls, reference, prev_control)
    sw = np.sqrt(config.state_weights)
    jac_state = (sens[1:] * sw[None, :, None]).reshape(6 * n, nu)
    jac_control = math.sqrt(config.w_control) * np.eye(nu)
    rate = np.eye(nu) - np.eye(nu, k=-4)
    jac_rate = math.sqrt(config.w_rate) * rate
    return r, np.vstack([jac_state, jac_control, jac_rate])


def shooting_gradient(config: NmpcConfig, params: ModelParameters, state, controls, reference, prev_control) -> np.ndarray:
    """Analytic gradient of the shooting objective with respect to the flattened controls."""
    controls = np.asarray(controls, dtype=float).reshape(config.horizon, 4)
    r, jac = _linearise(config, params, np.asarray(state, dtype=float), controls,
                        np.asarray(reference, dtype=float), np.asarray(prev_control, dtype=float))
    return 2.0 * jac.T @ r


def _active_set_step(config, jac, r, flat, pinned, lo, hi):
    """Gauss-Newton step on the free variables; bound variables the step
    would push outward are pinned and the reduced system is solved again."""
    pinned = pinned.copy()
    for _ in range(len(flat)):
        free = ~pinned
        step = np.zeros_like(flat)
        if not free.any():
            return step
        jf = jac[:, free]
        h = jf.T @ jf
        h[np.diag_indices_from(h)] += config.damping
        step[free] = np.linalg.solve(h, -jf.T @ r)
        outward = free & (((flat <= lo) & (step < 0)) | ((flat >= hi) & (step > 0)))
        if not outward.any():
            return step
        pinned |= outward
    return step


def solve(config: NmpcConfig, params: ModelParameters, state, reference, prev_control=None,
          initial=None) -> SolveResult:
    """Minimise the tracking objective over thrust sequences inside ``[-f_max, f_max]``.

    ``reference`` holds the desired states at the next ``horizon`` steps.
    Each iteration solves the Gauss-Newton system on the free variables
    (those not pinned at a bound by the gradient), then backtracks along the
    clamped step until the cost decreases. Costs of accepted iterates are
    recorded in ``costs`` and never increase.
    """
    n = config.horizon
    reference = np.asarray(reference, dtype=float)
    if reference.shape != (n, 6):
        raise ValueError(f"reference window must have shape ({n}, 6), got {reference.shape}")
    state = np.asarray(state, dtype=float)
    prev = np.zeros(4) if prev_control is None else np.asarray(prev_control, dtype=float)
    lo, hi = -config.f_max, config.f_max
    u = np.zeros((n, 4)) if initial is None else np.clip(np.asarray(initial, dtype=float).reshape(n, 4), lo, hi)

    r, jac = _linearise(config, params, state, u, reference, prev)
    cost = float(r @ r)
    costs = [cost]
    grad = 2.0 * jac.T @ r
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        flat = u.ravel()
        pinned = ((flat <= lo) & (grad > 0)) | ((flat >= hi) & (grad < 0))
        proj_norm = float(np.linalg.norm(grad[~pinned]))
        if proj_norm < config.tolerance:
            converged = True
            iterations -= 1
            break
        step = _active_set_step(config, jac, r, flat, pinned, lo, hi)
        alpha = 1.0
        accepted = False
        for _ in range(config.max_backtracks):
            trial = np.clip(flat + alpha * step, lo, hi).reshape(n, 4)
            try:
                r_new, jac_new = _linearise(config, params, state, trial, reference, prev)
            except (SolverAbort, ModelExplosionError):
                alpha *= 0.5
                continue
            new_cost = float(r_new @ r_new)
            # ties are accepted: near the optimum the cost is flat to rounding
            if new_cost <= cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no descent along the projected direction: a stationary point to working precision
            converged = True
            break
        moved = float(np.max(np.abs(trial.ravel() - flat)))
        u, r, jac, cost = trial, r_new, jac_new, new_cost
        costs.append(cost)
        grad = 2.0 * jac.T @ r
        if moved <= config.step_tolerance:
            converged = True
            break
    flat = u.ravel()
    pinned = ((flat <= lo) & (grad > 0)) | ((flat >= hi) & (grad < 0))
    grad_norm = float(np.linalg.norm(grad[~pinned]))
    if not converged:
        log.debug("NMPC hit the iteration cap (grad norm %.3g)", grad_norm)
    return SolveResult(u, cost, iterations, grad_norm, converged, costs)


def reference_window(trajectory, t: float, horizon: int, dt: float) -> np.ndarray:
    """Desired states at ``t + dt, ..., t + horizon * dt``, held at the end of the trajectory."""
    times = np.minimum(t + dt * np.arange(1, horizon + 1), trajectory.duration)
    return np.array([trajectory.sample(float(tk)).state() for tk in times])


class NmpcController:
    """Closed-loop wrapper: warm starts, applies the first control, degrades gracefully."""

    name = "nmpc"

    def __init__(self, config: NmpcConfig = NmpcConfig(), params: ModelParameters = ModelParameters()):
        self.config = config
        self.params = params
        self.reset()

    def reset(self) -> None:
        self.previous: np.ndarray | None = None
        self.last_command = np.zeros(4)
        self.degraded = False
        self.history: list[SolveResult] = []

    def warm_start(self) -> np.ndarray | None:
        if self.previous is None:
            return None
        return np.vstack([self.previous[1:], self.previous[-1:]])

    def control_step(self, state, reference) -> np.ndarray:
        """Solve from ``state`` against the reference window and return the first thrust command."""
        try:
            result = solve(self.config, self.params, state, reference, self.last_command, self.warm_start())
        except (SolverAbort, ModelExplosionError, np.linalg.LinAlgError) as exc:
            log.warning("NMPC solve failed (%s); holding previous command", exc)
            self.degraded = True
            return self.last_command.copy()
        self.history.append(result)
        self.previous = result.controls
        self.last_command = np.clip(result.controls[0], -self.config.f_max, self.config.f_max)
        return self.last_command.copy()

    def command(self, env, obs=None) -> np.ndarray:
        window = reference_window(env.trajectory, env.t, self.config.horizon, self.config.dt)
        return self.control_step(env.measured, window)
