"""Command line entry point: ``asvtrack {train,evaluate,ablate,simulate,metrics}``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, config_hash, load_config, section
from .ddpg import AgentConfig, EpisodeConfig, TrainConfig, TrainingDivergenceError, moving_average, save_policy, train
from .disturbances import Disturbances, default_scenario, scenario_from_config
from .dynamics import ModelExplosionError, ModelParameters
from .guidance import TrainingRanges, TrajectorySpec, load_reference_csv
from .harness import (
    ExperimentSpec,
    compare,
    compute_metrics,
    emit_plots,
    read_trace,
    run_ablation,
    run_experiment,
    simulate_open_loop,
    write_manifest,
    write_trace,
)
from .nmpc import NmpcConfig
from .reward import RewardParams

log = logging.getLogger("asvtrack")


def _typed(cls, values: dict, what: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown {what} key(s): {sorted(unknown)}")
    out = {}
    for key, value in values.items():
        if isinstance(value, list):
            value = tuple(value)
        out[key] = value
    try:
        return cls(**out)
    except TypeError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def trajectory_from_config(flat: dict):
    traj = section(flat, "trajectory")
    if "file" in traj:
        return load_reference_csv(traj["file"])
    if "origin" in traj:
        traj["origin"] = tuple(traj["origin"])
    return _typed(TrajectorySpec, traj, "trajectory")


def scenario_for(flat: dict, seed: int, fallback: str = "default") -> Disturbances | None:
    """``disturbances: none`` turns everything off. Explicit ``wind``/``wave``/``current``
    sections build a custom scenario; otherwise ``fallback`` decides."""
    if any(k.split(".")[0] in ("wind", "wave", "current") for k in flat):
        mode = flat.get("disturbances", "custom")
    else:
        mode = flat.get("disturbances", fallback)
    if mode in ("none", False, "off"):
        return None
    if mode == "custom":
        return scenario_from_config(flat, seed)
    if mode != "default":
        raise ConfigError(f"disturbances must be 'default' or 'none', got {mode!r}")
    return default_scenario(seed)


def train_config_from(flat: dict) -> TrainConfig:
    training = section(flat, "training")
    unknown = set(training) - {"episodes", "learn_after", "train_disturbances", "average_window",
                               "plateau_window", "plateau_tolerance", "plateau_min_episodes", "fixed_trajectory"}
    if unknown:
        raise ConfigError(f"unknown training key(s): {sorted(unknown)}")
    fixed = training.pop("fixed_trajectory", False)
    return TrainConfig(
        agent=_typed(AgentConfig, section(flat, "agent"), "agent"),
        episode=_typed(EpisodeConfig, section(flat, "episode"), "episode"),
        reward=RewardParams.from_mapping(section(flat, "reward")),
        model=ModelParameters.from_mapping(section(flat, "model")),
        ranges=_typed(TrainingRanges, section(flat, "ranges"), "ranges"),
        trajectory=trajectory_from_config(flat) if fixed else None,
        **training,
    )


def _load(args) -> dict:
    flat = load_config(args.config) if args.config else {}
    if args.seed is not None:
        flat["seed"] = args.seed
    if args.reps is not None:
        flat["reps"] = args.reps
    flat.setdefault("seed", 0)
    return flat


def _out_dir(args, flat) -> Path:
    out = Path(args.out_dir or flat.get("out_dir") or "results")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    flat = _load(args)
    config = train_config_from(flat)
    if args.episodes is not None:
        config = replace(config, episodes=args.episodes)
    out = _out_dir(args, flat)
    seed = int(flat["seed"])
    write_manifest(out, "train", flat, [seed], {"train_config": config.as_dict()})

    def progress(ep, row, avg):
        if ep % 50 == 0 or ep + 1 == config.episodes:
            log.info("episode %d: steps %d return %.2f avg %.2f", ep, row["steps"], row["return"], avg)

    result = train(config, seed=seed, progress=progress)
    extra = {"seed": seed, "config_hash": config_hash(flat)}
    save_policy(result.best_actor, out / "policy_best.bin", config, {**extra, "episode": result.best_episode})
    save_policy(result.agent.actor, out / "policy_final.bin", config, {**extra, "episode": len(result.curve) - 1})
    with open(out / "learning_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "steps", "return", "mean_e_p", "terminated_by", "moving_average"])
        avg = moving_average(result.returns, config.average_window)
        for row, a in zip(result.curve, avg):
            writer.writerow([row["episode"], row["steps"], repr(row["return"]), repr(row["mean_e_p"]),
                             row["terminated_by"], repr(float(a))])
    summary = {"episodes": len(result.curve), "best_episode": result.best_episode,
               "best_average": result.best_average, "stopped_by": result.stopped_by}
    (out / "training_summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return 0


def _experiment(flat, controller: str, checkpoint=None, label=None) -> ExperimentSpec:
    seed = int(flat["seed"])
    return ExperimentSpec(
        controller=controller,
        trajectory=trajectory_from_config(flat),
        scenario=scenario_for(flat, seed),
        repetitions=int(flat.get("reps", 3)),
        seed=seed,
        checkpoint=checkpoint,
        nmpc=NmpcConfig.from_mapping(section(flat, "nmpc")),
        model=ModelParameters.from_mapping(section(flat, "model")),
        reward=RewardParams.from_mapping(section(flat, "reward")),
        skip_transient=float(flat.get("skip_transient", 0.0)),
        label=label,
    )


def cmd_evaluate(args) -> int:
    flat = _load(args)
    out = _out_dir(args, flat)
    controllers = args.controller or [flat.get("controller", "nmpc")]
    checkpoint = args.checkpoint or flat.get("checkpoint")
    specs = [_experiment(flat, c, checkpoint if c == "drl" else None) for c in controllers]
    write_manifest(out, "evaluate", flat, specs[0].seeds(), {"experiments": [s.describe() for s in specs]})
    reports = {s.name: run_experiment(s, out) for s in specs}
    summary = {name: r.aggregate for name, r in reports.items()}
    if "drl" in reports and "nmpc" in reports:
        summary["comparison"] = compare(reports["drl"], reports["nmpc"])
        (out / "comparison.json").write_text(json.dumps(summary["comparison"], indent=2))
    if not args.no_plots:
        emit_plots(out)
    print(json.dumps(summary, indent=2))
    return 0


def cmd_ablate(args) -> int:
    flat = _load(args)
    out = _out_dir(args, flat)
    full_ckpt = args.full or flat.get("full_checkpoint")
    simple_ckpt = args.simple or flat.get("simple_checkpoint")
    if not full_ckpt or not simple_ckpt:
        raise ConfigError("ablate needs --full and --simple checkpoints")
    full = _experiment(flat, "drl", full_ckpt, "full_reward")
    simple = _experiment(flat, "drl", simple_ckpt, "simple_reward")
    write_manifest(out, "ablate", flat, full.seeds(), {"experiments": [full.describe(), simple.describe()]})
    result = run_ablation(full, simple, out)
    if not args.no_plots:
        emit_plots(out)
    print(json.dumps({k: v for k, v in result.items() if k not in ("full", "simple")}, indent=2))
    return 0


def _read_commands(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"command file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"f1", "f2", "f3", "f4"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: needs columns f1, f2, f3, f4")
        try:
            rows = [[float(r[c]) for c in ("f1", "f2", "f3", "f4")] for r in reader]
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: no commands")
    return np.array(rows)


def cmd_simulate(args) -> int:
    flat = _load(args)
    out = _out_dir(args, flat)
    if args.commands:
        commands = _read_commands(args.commands)
    else:
        if args.thrust is None:
            raise ConfigError("simulate needs --commands FILE or --thrust F1 F2 F3 F4")
        commands = np.tile(args.thrust, (args.steps, 1))
    seed = int(flat["seed"])
    scenario = scenario_for(flat, seed, fallback="none")
    initial = args.initial or [0.0] * 6
    write_manifest(out, "simulate", flat, [seed], {"steps": len(commands), "initial_state": initial})
    rows = simulate_open_loop(commands, initial, params=ModelParameters.from_mapping(section(flat, "model")),
                              scenario=scenario, seed=seed)
    write_trace(out / "simulate_trace.csv", rows)
    print(json.dumps({"steps": len(rows), "final_state": rows[-1][1:7]}))
    return 0


def cmd_metrics(args) -> int:
    paths = [Path(p) for p in args.traces]
    for p in paths:
        if not p.is_file():
            raise ConfigError(f"trace file not found: {p}")
    result = {str(p): compute_metrics(read_trace(p), args.skip_transient) for p in paths}
    print(json.dumps(result, indent=2))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or key = value config file")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--out-dir", help="output directory (default: results)")
    common.add_argument("--reps", type=int, help="evaluation repetitions")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="asvtrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a DDPG tracking policy")
    p.add_argument("--episodes", type=int, help="episode budget (overrides the config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="closed-loop evaluation of DRL and/or NMPC")
    p.add_argument("--controller", action="append", choices=["drl", "nmpc"],
                   help="controller to run; repeat for a side-by-side comparison")
    p.add_argument("--checkpoint", help="policy checkpoint for the drl controller")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="full vs simple reward policies on identical seeds")
    p.add_argument("--full", help="checkpoint trained with the full reward")
    p.add_argument("--simple", help="checkpoint trained with the simple reward")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("simulate", parents=[common], help="open-loop run of scripted thrust commands")
    p.add_argument("--commands", help="CSV with columns f1..f4, one row per step")
    p.add_argument("--thrust", type=float, nargs=4, metavar="F", help="constant thrust per thruster [N]")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--initial", type=float, nargs=6, metavar="Q", help="x y psi u v w")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", parents=[common], help="recompute metrics from trace CSVs")
    p.add_argument("traces", nargs="+")
    p.add_argument("--skip-transient", type=float, default=0.0, help="drop steps with t <= this [s]")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ModelExplosionError, TrainingDivergenceError, RuntimeError, ValueError,
            np.linalg.LinAlgError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
