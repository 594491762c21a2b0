"""Closed-loop experiments, metrics, result files and plot scripts."""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import subprocess
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash
from .ddpg import TRACE_COLUMNS, EpisodeConfig, PolicyController, TrackingEnv, episode_config_from_meta
from .disturbances import Disturbances
from .dynamics import ModelExplosionError, ModelParameters, angle_diff
from .nmpc import NmpcConfig, NmpcController
from .reward import RewardParams

log = logging.getLogger(__name__)

# reference values quoted in reports only; never asserted
REFERENCE_NUMBERS = {
    "drl_rmse_m": 0.068,
    "nmpc_rmse_m": 0.146,
    "drl_vs_nmpc_error_reduction": 0.5333,
    "full_reward_rmse_m": 0.0496,
    "simple_reward_rmse_m": 0.0743,
    "full_vs_simple_error_reduction": 0.3303,
    "full_vs_simple_energy_reduction": 0.3707,
}

COL = {name: i for i, name in enumerate(TRACE_COLUMNS)}


# ---------------------------------------------------------------- traces

def write_trace(path, rows) -> None:
    """Write trace rows with full float precision (``repr`` round-trips exactly)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def read_trace(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty trace file")
        missing = [c for c in ("e_p", "psi", "psi_d", "f1", "f2", "f3", "f4") if c not in header]
        if missing:
            raise ValueError(f"{path}: trace lacks columns {missing}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    # reorder into the canonical column layout when the file has all of it
    if header != TRACE_COLUMNS and all(c in header for c in TRACE_COLUMNS):
        data = data[:, [header.index(c) for c in TRACE_COLUMNS]]
    elif header != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected trace header")
    return data


# ---------------------------------------------------------------- metrics

def compute_metrics(trace, skip_transient: float = 0.0) -> dict:
    """RMSE of the position error, mean absolute heading error and mean power.

    Power is ``sqrt(sum_k sum_i |f_i(k)| / N)``. ``skip_transient`` drops
    the steps with ``t <= skip_transient`` before computing anything.
    """
    data = np.asarray(trace, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("cannot compute metrics of an empty trace")
    if skip_transient > 0:
        data = data[data[:, COL["t"]] > skip_transient]
        if data.shape[0] == 0:
            raise ValueError("no steps left after the transient")
    e_p = data[:, COL["e_p"]]
    heading = np.abs(angle_diff(data[:, COL["psi"]], data[:, COL["psi_d"]]))
    thrust = np.abs(data[:, [COL["f1"], COL["f2"], COL["f3"], COL["f4"]]])
    n = data.shape[0]
    return {
        "rmse_e_p": float(np.sqrt(np.sum(e_p * e_p) / n)),
        "mean_heading_error": float(np.sum(heading) / n),
        "e_ave": float(np.sqrt(np.sum(thrust) / n)),
        "n_steps": int(n),
    }


# ---------------------------------------------------------------- experiments

@dataclass
class ExperimentSpec:
    controller: str  # "drl" or "nmpc"
    trajectory: object
    scenario: Disturbances | None = None
    repetitions: int = 3
    seed: int = 0
    checkpoint: str | None = None
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    model: ModelParameters = field(default_factory=ModelParameters)
    reward: RewardParams = field(default_factory=RewardParams)
    skip_transient: float = 0.0
    label: str | None = None

    def __post_init__(self):
        if self.controller not in ("drl", "nmpc"):
            raise ConfigError(f"controller must be 'drl' or 'nmpc', got {self.controller!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.controller == "drl":
            if not self.checkpoint:
                raise ConfigError("a drl experiment needs a checkpoint")
            if not Path(self.checkpoint).is_file():
                raise FileNotFoundError(f"checkpoint not found: {self.checkpoint}")

    @property
    def name(self) -> str:
        return self.label or self.controller

    def seeds(self) -> list[int]:
        """Distinct disturbance seed per repetition."""
        return [self.seed + 1000 * k for k in range(self.repetitions)]

    def describe(self) -> dict:
        traj = self.trajectory.as_dict() if hasattr(self.trajectory, "as_dict") else repr(self.trajectory)
        return {
            "controller": self.controller,
            "label": self.name,
            "trajectory": traj,
            "disturbances": _scenario_dict(self.scenario),
            "repetitions": self.repetitions,
            "seed": self.seed,
            "checkpoint": self.checkpoint,
            "nmpc": self.nmpc.as_dict() if self.controller == "nmpc" else None,
            "skip_transient": self.skip_transient,
        }


def _scenario_dict(scenario: Disturbances | None):
    if scenario is None or not scenario.active:
        return None
    out = {"seed": scenario.seed}
    for name in ("wind", "wave", "current"):
        model = getattr(scenario, name)
        out[name] = {f.name: getattr(model, f.name) for f in fields(model)
                     if not isinstance(getattr(model, f.name), np.ndarray)}
    return out


@dataclass
class Repetition:
    index: int
    seed: int
    status: str  # "ok", "boundary" or "error"
    metrics: dict | None
    trace_file: str | None
    message: str = ""


@dataclass
class MetricsReport:
    name: str
    repetitions: list
    aggregate: dict

    @property
    def failed(self) -> list:
        return [r for r in self.repetitions if r.status != "ok"]

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "aggregate": self.aggregate,
            "repetitions": [r.__dict__ for r in self.repetitions],
            "failed": [r.index for r in self.failed],
        }


def build_controller(spec: ExperimentSpec):
    """Returns ``(controller, episode config)`` for an experiment."""
    if spec.controller == "nmpc":
        return NmpcController(spec.nmpc, spec.model), EpisodeConfig()
    ctrl, meta = PolicyController.from_checkpoint(spec.checkpoint)
    return ctrl, episode_config_from_meta(meta)


def initial_state_on_reference(trajectory) -> list:
    ref = trajectory.sample(0.0)
    return [ref.x_d, ref.y_d, ref.psi_d, 0.0, 0.0, 0.0]


def closed_loop(controller, env: TrackingEnv, trajectory, initial_state, disturbance_seed: int | None = None):
    """Run one evaluation episode; returns ``(rows, status, message)``."""
    controller.reset()
    obs = env.reset(trajectory, np.random.default_rng(0), noisy=False, initial_state=initial_state,
                    disturbance_seed=disturbance_seed)
    rows = []
    try:
        while True:
            result = env.step(controller.command(env, obs))
            rows.append(result.row)
            obs = result.obs
            if result.terminated:
                return rows, "boundary", f"left the error bound at t={result.row[0]:.1f} s"
            if result.truncated:
                return rows, "ok", ""
    except ModelExplosionError as exc:
        return rows, "error", str(exc)


def run_experiment(spec: ExperimentSpec, out_dir=None) -> MetricsReport:
    """Run every repetition, write traces and ``metrics.json`` under ``out_dir``.

    Failed repetitions (boundary violation or numerical failure) are listed
    and left out of the aggregate.
    """
    controller, episode = build_controller(spec)
    episode = EpisodeConfig(**{**episode.__dict__, "t_max": _episode_length(spec.trajectory, episode)})
    out = Path(out_dir) if out_dir is not None else None
    reps = []
    for k, seed in enumerate(spec.seeds()):
        env = TrackingEnv(spec.model, spec.reward, episode, spec.scenario)
        rows, status, message = closed_loop(controller, env, spec.trajectory,
                                            initial_state_on_reference(spec.trajectory), seed)
        trace_file = None
        if out is not None:
            trace_file = f"{spec.name}_rep{k}_trace.csv"
            write_trace(out / trace_file, rows)
        metrics = compute_metrics(rows, spec.skip_transient) if rows else None
        if status != "ok":
            log.warning("%s repetition %d failed: %s", spec.name, k, message)
        reps.append(Repetition(k, seed, status, metrics, trace_file, message))
    report = MetricsReport(spec.name, reps, aggregate_metrics(reps))
    if out is not None:
        (out / f"{spec.name}_metrics.json").write_text(json.dumps(
            {**report.as_dict(), "experiment": spec.describe()}, indent=2))
    return report


def _episode_length(trajectory, episode: EpisodeConfig) -> float:
    steps = max(1, int(math.floor(trajectory.duration / episode.dt + 1e-9)))
    return steps * episode.dt


def aggregate_metrics(reps) -> dict:
    ok = [r.metrics for r in reps if r.status == "ok"]
    agg = {"n_ok": len(ok), "n_failed": len(reps) - len(ok)}
    if not ok:
        return agg
    for key in ("rmse_e_p", "mean_heading_error", "e_ave"):
        values = np.array([m[key] for m in ok])
        agg[f"{key}_mean"] = float(np.mean(values))
        agg[f"{key}_std"] = float(np.std(values))
    return agg


def compare(drl: MetricsReport, nmpc: MetricsReport) -> dict:
    """Per-repetition DRL-vs-NMPC ordering on matching seeds."""
    wins = []
    for a, b in zip(drl.repetitions, nmpc.repetitions):
        if a.status == "ok" and b.status == "ok":
            wins.append(a.metrics["rmse_e_p"] < b.metrics["rmse_e_p"])
        else:
            # a failed DRL run can never count as a win
            wins.append(a.status == "ok")
    out = {"drl_better": wins, "drl_wins": int(sum(wins)), "repetitions": len(wins)}
    if drl.aggregate.get("n_ok") and nmpc.aggregate.get("n_ok"):
        d, n = drl.aggregate["rmse_e_p_mean"], nmpc.aggregate["rmse_e_p_mean"]
        out["error_reduction"] = 1.0 - d / n
    out["reference"] = {k: REFERENCE_NUMBERS[k] for k in ("drl_rmse_m", "nmpc_rmse_m", "drl_vs_nmpc_error_reduction")}
    return out


def run_ablation(full: ExperimentSpec, simple: ExperimentSpec, out_dir=None) -> dict:
    """Evaluate full- and simple-reward policies on identical seeds and report ratios."""
    if full.seeds() != simple.seeds():
        raise ValueError("ablation arms must share seeds")
    a = run_experiment(full, out_dir)
    b = run_experiment(simple, out_dir)
    result = {"full": a.as_dict(), "simple": b.as_dict()}
    if a.aggregate.get("n_ok") and b.aggregate.get("n_ok"):
        err = a.aggregate["rmse_e_p_mean"] / b.aggregate["rmse_e_p_mean"]
        energy = a.aggregate["e_ave_mean"] / b.aggregate["e_ave_mean"]
        result.update({
            "error_ratio": err,
            "energy_ratio": energy,
            "error_reduction": 1.0 - err,
            "energy_reduction": 1.0 - energy,
        })
    result["reference"] = {k: REFERENCE_NUMBERS[k] for k in
                           ("full_reward_rmse_m", "simple_reward_rmse_m", "full_vs_simple_error_reduction",
                            "full_vs_simple_energy_reduction")}
    if out_dir is not None:
        Path(out_dir, "ablation.json").write_text(json.dumps(result, indent=2))
    return result


def simulate_open_loop(commands, initial_state=(0, 0, 0, 0, 0, 0), trajectory=None,
                       params: ModelParameters = ModelParameters(), scenario: Disturbances | None = None,
                       seed: int = 0) -> list:
    """Apply a scripted thrust sequence; returns trace rows. Never stops on the error bound."""
    from .guidance import TrajectorySpec

    commands = np.atleast_2d(np.asarray(commands, dtype=float))
    if commands.shape[1] != 4:
        raise ValueError("scripted commands need four thrust columns")
    if trajectory is None:
        trajectory = TrajectorySpec("line", speed=0.3, duration=max(len(commands) * params.dt, params.dt))
    episode = EpisodeConfig(t_max=len(commands) * params.dt, dt=params.dt)
    env = TrackingEnv(params, RewardParams(), episode, scenario)
    env.reset(trajectory, np.random.default_rng(seed), initial_state=list(initial_state), disturbance_seed=seed)
    return [env.step(u).row for u in commands]


# ---------------------------------------------------------------- manifest

def git_commit() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def write_manifest(out_dir, command: str, config: dict, seeds, extra: dict | None = None) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seeds": list(seeds),
        "version": __version__,
        "git_commit": git_commit(),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        **(extra or {}),
    }
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


# ---------------------------------------------------------------- plots

_PLOT_HEADER = '''"""Generated plot script; reads the trace CSVs next to it."""
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent


def load(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in rows[0]} if rows else {}


traces = sorted(HERE.glob("*_trace.csv"))
'''

_PLOT_BODIES = {
    "plot_trajectory.py": '''
fig, ax = plt.subplots(figsize=(7, 4))
for i, path in enumerate(traces):
    d = load(path)
    if not d:
        continue
    if i == 0:
        ax.plot(d["x_d"], d["y_d"], "k--", label="reference")
    ax.plot(d["x"], d["y"], label=path.stem.replace("_trace", ""))
ax.set_xlabel("x [m]")
ax.set_ylabel("y [m]")
ax.axis("equal")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(HERE / "trajectory.png", dpi=150)
''',
    "plot_error.py": '''
fig, ax = plt.subplots(figsize=(7, 3))
for path in traces:
    d = load(path)
    if d:
        ax.plot(d["t"], d["e_p"], label=path.stem.replace("_trace", ""))
ax.set_xlabel("t [s]")
ax.set_ylabel("position error [m]")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(HERE / "tracking_error.png", dpi=150)
''',
    "plot_forces.py": '''
for path in traces:
    d = load(path)
    if not d:
        continue
    fig, axes = plt.subplots(4, 1, figsize=(7, 6), sharex=True)
    for i, ax in enumerate(axes, 1):
        ax.plot(d["t"], d[f"f{i}"])
        ax.set_ylabel(f"f{i} [N]")
    axes[-1].set_xlabel("t [s]")
    fig.suptitle(path.stem.replace("_trace", ""))
    fig.tight_layout()
    fig.savefig(HERE / (path.stem.replace("_trace", "") + "_forces.png"), dpi=150)
    plt.close(fig)
''',
}


def emit_plots(result_dir) -> list[Path]:
    """Write the three plotting scripts into ``result_dir`` if it holds traces."""
    result_dir = Path(result_dir)
    if not result_dir.is_dir() or not list(result_dir.glob("*_trace.csv")):
        log.warning("no trace files in %s; no plot scripts written", result_dir)
        return []
    written = []
    for name, body in _PLOT_BODIES.items():
        path = result_dir / name
        path.write_text(_PLOT_HEADER + body)
        written.append(path)
    return written


# ---------------------------------------------------------------- calibration

def mean_effort(rows) -> float:
    """Mean total absolute thrust per step, ``sum_i |f_i|`` averaged over the run."""
    data = np.asarray(rows, dtype=float)
    return float(np.mean(np.sum(np.abs(data[:, [COL["f1"], COL["f2"], COL["f3"], COL["f4"]]]), axis=1)))


def effort_increase(trajectory, scenario: Disturbances, seeds, nmpc: NmpcConfig = NmpcConfig(),
                    model: ModelParameters = ModelParameters()) -> float:
    """Relative rise in NMPC control effort caused by ``scenario``, averaged over ``seeds``."""
    controller = NmpcController(nmpc, model)
    episode = EpisodeConfig(t_max=_episode_length(trajectory, EpisodeConfig()))
    start = initial_state_on_reference(trajectory)
    calm_rows, _, _ = closed_loop(controller, TrackingEnv(model, RewardParams(), episode), trajectory, start)
    calm = mean_effort(calm_rows)
    disturbed = []
    for seed in seeds:
        env = TrackingEnv(model, RewardParams(), episode, scenario)
        rows, _, _ = closed_loop(controller, env, trajectory, start, seed)
        disturbed.append(mean_effort(rows))
    return float(np.mean(disturbed)) / calm - 1.0
