"""DDPG tracking agent: environment, observation stacking, training loop."""

from __future__ import annotations

import copy
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .config import ConfigError
from .disturbances import Disturbances
from .dynamics import ModelParameters, angle_diff, step_rk4, wrap_angle
from .guidance import TrainingRanges, TrajectorySpec, sight_heading_from, training_sampler
from .nn import Adam, Mlp, OuNoise, ReplayBuffer, load_mlp, save_mlp
from .reward import RewardParams, total_reward

log = logging.getLogger(__name__)

RECORD_SIZE = 16
TRACE_COLUMNS = [
    "t", "x", "y", "psi", "u", "v", "w",
    "x_d", "y_d", "psi_d", "u_d", "v_d", "w_d", "psi_s",
    "f1", "f2", "f3", "f4", "e_p",
    "r_p", "r_psi", "r_w", "r_a", "r_e", "reward",
    "tau_x", "tau_y", "tau_n",
]


class TrainingDivergenceError(RuntimeError):
    """A loss or parameter became non-finite during training."""


@dataclass(frozen=True)
class EpisodeConfig:
    dt: float = 0.1
    t_max: float = 30.0
    # variance of the additive Gaussian noise on each measured state component
    measurement_noise: float = 0.1
    init_radius: float = 0.3
    random_heading: bool = True
    history: int = 4
    relative_obs: bool = True
    lookahead: float = 0.9

    def __post_init__(self):
        steps = self.t_max / self.dt
        if self.dt <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ConfigError("t_max must be an integer multiple of dt > 0")
        if self.measurement_noise < 0 or self.history < 0 or self.lookahead <= 0:
            raise ConfigError("invalid episode configuration")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def obs_dim(self) -> int:
        return RECORD_SIZE * (self.history + 1)


def make_record(measured, reference, psi_s: float, prev_action, f_max: float, relative: bool = True) -> np.ndarray:
    """One 16-value observation record ``[q, q_d, a_prev]``.

    In relative mode the vessel part holds the position error in the
    reference-tangent frame, heading error to ``psi_d`` and body velocities;
    the reference part holds the position error in the body frame, the
    bearing to the sight point relative to the heading, and the desired
    velocities. The previous action is normalised by ``f_max``.
    """
    q = np.asarray(measured, dtype=float)
    qd = np.asarray(reference, dtype=float)
    a_prev = np.asarray(prev_action, dtype=float) / f_max
    if not relative:
        return np.concatenate([q, qd, a_prev])
    dx, dy = q[0] - qd[0], q[1] - qd[1]
    cd, sd = math.cos(qd[2]), math.sin(qd[2])
    cb, sb = math.cos(q[2]), math.sin(q[2])
    return np.array([
        cd * dx + sd * dy, -sd * dx + cd * dy, angle_diff(q[2], qd[2]), q[3], q[4], q[5],
        cb * dx + sb * dy, -sb * dx + cb * dy, angle_diff(psi_s, q[2]), qd[3], qd[4], qd[5],
        *a_prev,
    ])


class ObservationHistory:
    """Sliding window over the last ``history + 1`` records, zero padded."""

    def __init__(self, history: int):
        self.history = history
        self.reset()

    def reset(self) -> None:
        self.window = deque([np.zeros(RECORD_SIZE)] * (self.history + 1), maxlen=self.history + 1)

    def push(self, record) -> np.ndarray:
        self.window.append(np.asarray(record, dtype=float))
        return np.concatenate(self.window)


def make_observation(history: ObservationHistory, measured, reference, psi_s, prev_action, f_max, relative=True):
    return history.push(make_record(measured, reference, psi_s, prev_action, f_max, relative))


@dataclass
class StepResult:
    obs: np.ndarray
    reward: object
    terminated: bool
    truncated: bool
    row: list


class TrackingEnv:
    """Closed-loop simulator: vessel, reference, disturbances, reward, observations."""

    def __init__(self, params: ModelParameters = ModelParameters(), reward_params: RewardParams = RewardParams(),
                 episode: EpisodeConfig = EpisodeConfig(), disturbances: Disturbances | None = None):
        if abs(params.dt - episode.dt) > 1e-12:
            params = replace(params, dt=episode.dt)
        self.params = params
        self.reward_params = reward_params
        self.episode = episode
        self.disturbance_template = disturbances
        self.history = ObservationHistory(episode.history)

    def reset(self, trajectory, rng: np.random.Generator, noisy: bool = False,
              initial_state=None, disturbance_seed: int | None = None) -> np.ndarray:
        """Start an episode; returns the first observation.

        Without ``initial_state`` the vessel starts at rest inside a disc of
        ``init_radius`` around the first reference point with a random heading.
        """
        self.trajectory = trajectory
        self.rng = rng
        self.noisy = noisy
        self.t = 0.0
        self.k = 0
        ref0 = trajectory.sample(0.0)
        if initial_state is None:
            radius = self.episode.init_radius * math.sqrt(rng.uniform())
            bearing = rng.uniform(-math.pi, math.pi)
            heading = wrap_angle(rng.uniform(-math.pi, math.pi)) if self.episode.random_heading else ref0.psi_d
            initial_state = [ref0.x_d + radius * math.cos(bearing), ref0.y_d + radius * math.sin(bearing),
                             heading, 0.0, 0.0, 0.0]
        self.q = np.array(initial_state, dtype=float)
        self.q[2] = wrap_angle(self.q[2])
        self.prev_cmd = np.zeros(4)
        self.disturbances = None
        if self.disturbance_template is not None and self.disturbance_template.active:
            self.disturbances = copy.deepcopy(self.disturbance_template)
            seed = self.disturbance_template.seed if disturbance_seed is None else disturbance_seed
            self.disturbances.reseed(seed)
        self.history.reset()
        self.reference = ref0
        return self._observe()

    def measured_state(self) -> np.ndarray:
        if not self.noisy or self.episode.measurement_noise == 0:
            return self.q.copy()
        noise = math.sqrt(self.episode.measurement_noise) * self.rng.standard_normal(6)
        measured = self.q + noise
        measured[2] = wrap_angle(measured[2])
        return measured

    def _observe(self) -> np.ndarray:
        self.measured = self.measured_state()
        ref = self.reference
        psi_s = sight_heading_from(ref, self.measured[:2], self.episode.lookahead)
        return make_observation(self.history, self.measured, ref.state(), psi_s, self.prev_cmd,
                                self.params.f_max, self.episode.relative_obs)

    def step(self, cmd) -> StepResult:
        cmd = np.clip(np.asarray(cmd, dtype=float), -self.params.f_max, self.params.f_max)
        if self.disturbances is not None:
            tau_env = self.disturbances.step(self.params, self.q, self.episode.dt)
        else:
            tau_env = np.zeros(3)
        self.q = step_rk4(self.params, self.q, cmd, tau_env, self.episode.dt)
        self.k += 1
        self.t = self.k * self.episode.dt
        self.reference = ref = self.trajectory.sample(min(self.t, self.trajectory.duration))
        psi_s = sight_heading_from(ref, self.q[:2], self.episode.lookahead)
        reward = total_reward(self.q, ref.state(), psi_s, cmd, self.prev_cmd, self.reward_params)
        row = [self.t, *self.q, *ref.state(), psi_s, *cmd, reward.e_p,
               reward.r_p, reward.r_psi, reward.r_w, reward.r_a, reward.r_e, reward.total, *tau_env]
        self.prev_cmd = cmd
        obs = self._observe()
        return StepResult(obs, reward, reward.out_of_bounds, self.k >= self.episode.n_steps, row)


@dataclass(frozen=True)
class AgentConfig:
    hidden: tuple = (300, 300)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 128
    buffer_size: int = 1_000_000
    ou_theta: float = 0.2
    ou_sigma: float = 0.15
    ou_dt: float = 0.1
    final_init: float = 3e-3


class DdpgAgent:
    """Actor-critic pair with target networks, replay buffer and OU exploration."""

    def __init__(self, obs_dim: int, config: AgentConfig = AgentConfig(), f_max: float = 4.0, seed=0):
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        init_seq, run_seq = seq.spawn(2)
        init_rng = np.random.default_rng(init_seq)
        self.rng = np.random.default_rng(run_seq)
        self.config = config
        self.obs_dim = obs_dim
        self.f_max = f_max
        hidden = list(config.hidden)
        self.actor = Mlp([obs_dim, *hidden, 4], "tanh", init_rng, config.final_init)
        self.critic = Mlp([obs_dim + 4, *hidden, 1], "identity", init_rng, config.final_init)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(self.actor.flat, config.actor_lr)
        self.critic_opt = Adam(self.critic.flat, config.critic_lr)
        self.buffer = ReplayBuffer(config.buffer_size, obs_dim, 4)
        self.noise = OuNoise(4, config.ou_theta, config.ou_sigma, config.ou_dt)

    def act(self, obs, explore: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Returns ``(thrust command [N], normalised action stored for learning)``."""
        action = self.actor.forward(obs, cache=False)
        if explore:
            action = action + self.noise.sample(self.rng)
        action = np.clip(action, -1.0, 1.0)
        return action * self.f_max, action

    def train_step(self, batch) -> tuple[float, float]:
        """One critic and one actor update on ``batch``; returns the two losses."""
        obs, act, rew, next_obs, done = batch
        n = len(rew)
        cfg = self.config
        next_act = self.target_actor.forward(next_obs, cache=False)
        next_q = self.target_critic.forward(np.hstack([next_obs, next_act]), cache=False)[:, 0]
        target = rew + cfg.gamma * (1.0 - done) * next_q

        q = self.critic.forward(np.hstack([obs, act]))[:, 0]
        td = q - target
        critic_loss = float(np.mean(td * td))
        if not math.isfinite(critic_loss):
            raise TrainingDivergenceError(f"non-finite critic loss {critic_loss}")
        grad, _ = self.critic.backward((2.0 / n) * td[:, None])

        pi = self.actor.forward(obs)
        q_pi = self.critic.forward(np.hstack([obs, pi]))[:, 0]
        actor_loss = -float(np.mean(q_pi))
        if not math.isfinite(actor_loss):
            raise TrainingDivergenceError(f"non-finite actor loss {actor_loss}")
        # both gradients are taken before either network moves
        _, grad_in = self.critic.backward(np.full((n, 1), -1.0 / n), param_grads=False)
        actor_grad, _ = self.actor.backward(grad_in[:, self.obs_dim:])
        self.critic_opt.step(grad)
        self.actor_opt.step(actor_grad)
        self.target_critic.soft_update(self.critic, cfg.tau)
        self.target_actor.soft_update(self.actor, cfg.tau)
        return critic_loss, actor_loss


@dataclass
class EpisodeLog:
    rows: list = field(default_factory=list)
    episode_return: float = 0.0
    steps: int = 0
    terminated_by: str = "time"
    losses: list = field(default_factory=list)

    @property
    def mean_e_p(self) -> float:
        return float(np.mean([r[18] for r in self.rows])) if self.rows else float("nan")

    def as_array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, len(TRACE_COLUMNS))


def run_episode(env: TrackingEnv, agent: DdpgAgent, trajectory, mode: str = "eval",
                rng: np.random.Generator | None = None, initial_state=None,
                disturbance_seed: int | None = None, learn_after: int | None = None) -> EpisodeLog:
    """Roll one episode. ``train`` mode explores, adds measurement noise,
    stores transitions and updates the networks every step."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    rng = np.random.default_rng(0) if rng is None else rng
    learn_after = agent.config.batch_size if learn_after is None else max(learn_after, agent.config.batch_size)
    obs = env.reset(trajectory, rng, noisy=training, initial_state=initial_state, disturbance_seed=disturbance_seed)
    agent.noise.reset()
    episode = EpisodeLog()
    while True:
        cmd, action = agent.act(obs, explore=training)
        result = env.step(cmd)
        episode.rows.append(result.row)
        episode.episode_return += result.reward.total
        episode.steps += 1
        if training:
            # time-limit truncation is not a terminal state: keep bootstrapping
            agent.buffer.push(obs, action, result.reward.total, result.obs, result.terminated)
            if len(agent.buffer) >= learn_after:
                batch = agent.buffer.sample(agent.config.batch_size, agent.rng)
                episode.losses.append(agent.train_step(batch))
        obs = result.obs
        if result.terminated:
            episode.terminated_by = "boundary"
            break
        if result.truncated:
            break
    return episode


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 3000
    agent: AgentConfig = AgentConfig()
    episode: EpisodeConfig = EpisodeConfig()
    reward: RewardParams = RewardParams()
    model: ModelParameters = ModelParameters()
    ranges: TrainingRanges = TrainingRanges()
    # fixed training trajectory; None draws a random sinusoid each episode
    trajectory: TrajectorySpec | None = None
    train_disturbances: bool = True
    # extra warm-up before updates start (never below the batch size)
    learn_after: int = 0
    average_window: int = 50
    plateau_window: int = 200
    plateau_tolerance: float = 0.01
    plateau_min_episodes: int = 1500

    def as_dict(self) -> dict:
        out = asdict(self)
        if self.trajectory is not None:
            out["trajectory"] = self.trajectory.as_dict()
        return out


@dataclass
class TrainResult:
    agent: DdpgAgent
    best_actor: Mlp
    curve: list
    best_episode: int
    best_average: float
    stopped_by: str

    @property
    def returns(self) -> np.ndarray:
        return np.array([row["return"] for row in self.curve])


def moving_average(values, window: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    csum = np.cumsum(np.insert(values, 0, 0.0))
    for i in range(len(values)):
        lo = max(0, i + 1 - window)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def _training_disturbances(seed_seq: np.random.SeedSequence) -> Disturbances:
    from .disturbances import default_scenario

    rng = np.random.default_rng(seed_seq)
    scenario = default_scenario(int(rng.integers(2**31)))
    scenario.wind.direction = rng.uniform(-math.pi, math.pi)
    scenario.wave.direction = rng.uniform(-math.pi, math.pi)
    scenario.current.direction = rng.uniform(-math.pi, math.pi)
    scenario.current.speed = rng.uniform(0.0, scenario.current.cap)
    return scenario


def train(config: TrainConfig = TrainConfig(), seed: int = 0, progress=None) -> TrainResult:
    """Train a tracking policy; the returned ``best_actor`` maximises the moving-average return."""
    root = np.random.SeedSequence(seed)
    agent_seq, env_seq, dist_seq = root.spawn(3)
    agent = DdpgAgent(config.episode.obs_dim, config.agent, config.model.f_max, agent_seq)
    env = TrackingEnv(config.model, config.reward, config.episode)
    env_rng = np.random.default_rng(env_seq)
    dist_seqs = dist_seq.spawn(max(config.episodes, 1))
    curve: list[dict] = []
    best_actor = agent.actor.copy()
    best_avg, best_episode = -math.inf, -1
    stopped_by = "budget"
    averages: list[float] = []
    for ep in range(config.episodes):
        trajectory = config.trajectory or training_sampler(env_rng, config.ranges)
        env.disturbance_template = _training_disturbances(dist_seqs[ep]) if config.train_disturbances else None
        log_ep = run_episode(env, agent, trajectory, "train", env_rng, learn_after=config.learn_after)
        curve.append({
            "episode": ep, "steps": log_ep.steps, "return": log_ep.episode_return,
            "mean_e_p": log_ep.mean_e_p, "terminated_by": log_ep.terminated_by,
        })
        window = [row["return"] for row in curve[-config.average_window:]]
        avg = float(np.mean(window))
        averages.append(avg)
        if len(curve) >= min(config.average_window, config.episodes) and avg > best_avg:
            best_avg, best_episode = avg, ep
            best_actor = agent.actor.copy()
        if progress is not None:
            progress(ep, curve[-1], avg)
        if ep + 1 >= max(config.plateau_min_episodes, config.plateau_window + 1):
            before = averages[-1 - config.plateau_window]
            if abs(avg - before) < config.plateau_tolerance * abs(before):
                stopped_by = "plateau"
                break
    if best_episode < 0:
        best_actor = agent.actor.copy()
    return TrainResult(agent, best_actor, curve, best_episode, best_avg, stopped_by)


def policy_metadata(config: TrainConfig) -> dict:
    return {
        "history": config.episode.history,
        "relative_obs": config.episode.relative_obs,
        "lookahead": config.episode.lookahead,
        "f_max": config.model.f_max,
        "dt": config.episode.dt,
    }


def save_policy(actor: Mlp, path, config: TrainConfig, extra: dict | None = None) -> None:
    save_mlp(actor, path, {**policy_metadata(config), **(extra or {})})


class PolicyController:
    """Greedy controller wrapping a trained actor for evaluation."""

    name = "drl"

    def __init__(self, actor: Mlp, f_max: float = 4.0):
        self.actor = actor
        self.f_max = f_max

    @classmethod
    def from_checkpoint(cls, path) -> tuple["PolicyController", dict]:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        actor, meta = load_mlp(path)
        return cls(actor, meta.get("f_max", 4.0)), meta

    def reset(self) -> None:
        pass

    def command(self, env: TrackingEnv, obs) -> np.ndarray:
        return np.clip(self.actor.forward(obs, cache=False), -1.0, 1.0) * self.f_max


def episode_config_from_meta(meta: dict, base: EpisodeConfig = EpisodeConfig()) -> EpisodeConfig:
    keys = {f.name for f in fields(EpisodeConfig)}
    return replace(base, **{k: v for k, v in meta.items() if k in keys})
