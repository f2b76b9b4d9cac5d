"""Command-line entry points for simulation, training and reports."""

from __future__ import annotations

import json
import os
import sys
from importlib.metadata import PackageNotFoundError, version

import click
import numpy as np
import torch

from .config import config_hash, describe, preset_config, sim_config_from_json
from .env import PickingEnv
from .layout import build_layout
from .morl import MORLConfig, ParetoArchive, dominates, hypervolume_2d, run_morl
from .nets import AemoActor, Critic, argmax_action, load_checkpoint, save_checkpoint
from .oracle import DeterministicInstance, random_instance, simulate_deterministic, solve_exact
from .policies import make_policy
from .sampling import RandomStream
from .simulation import SimConfig, SimulationIntegrityError
from .training import PPOConfig, picking_env_factory, train_ppo


def _version() -> str:
    try:
        return version("copick")
    except PackageNotFoundError:  # pragma: no cover - running from a source tree
        return "unversioned"


def _header(cfg_hash: str) -> list[str]:
    return [f"# config={cfg_hash} version={_version()}"]


def _load_sim_config(preset: str | None, config_path: str | None) -> SimConfig:
    if (preset is None) == (config_path is None):
        raise click.UsageError("give exactly one of --preset or --config")
    if preset is not None:
        return preset_config(preset)
    with open(config_path) as fh:
        return sim_config_from_json(fh.read())


def _checkpoint_policy(path: str, config: SimConfig):
    lay = build_layout(config.n_aisles, config.depth)
    actor = AemoActor(lay.aisle_of[:lay.n_pick_nodes])
    load_checkpoint(path, actor)

    def policy(env: PickingEnv, feats, mask):
        ft = torch.from_numpy(np.ascontiguousarray(feats, dtype=np.float32))
        mt = torch.from_numpy(np.ascontiguousarray(mask))
        with torch.no_grad():
            return argmax_action(actor(ft, mt))
    return policy


def _baseline_policy(name: str, seed: int):
    inner = make_policy(name, RandomStream(seed ^ 0xBEEF))

    def policy(env: PickingEnv, feats, mask):
        return inner(env.state, env.requesting_picker, mask)
    return policy


def _run_episodes(config: SimConfig, policy_spec: str, seed: int, episodes: int):
    if policy_spec.startswith("checkpoint:"):
        policy = _checkpoint_policy(policy_spec.split(":", 1)[1], config)
    else:
        policy = _baseline_policy(policy_spec, seed)
    rows = []
    env = PickingEnv(config)
    for e in range(episodes):
        obs, mask = env.reset(seed + e)
        done = False
        while not done:
            action = policy(env, obs, mask)
            _, obs, mask, done = env.step(action)
        completion, sd, workloads = env.metrics()
        rows.append((e, seed + e, completion, sd, workloads))
    return rows


@click.group()
def cli():
    """Collaborative order-picking lab."""


@cli.command()
@click.option("--preset", type=click.Choice(["S", "M", "L", "XL"]), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--policy", default="greedy",
              help="greedy, vi, random, or checkpoint:PATH")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--episodes", type=int, default=100, show_default=True)
@click.option("--out", type=click.Path(), default="-", show_default=True)
def simulate(preset, config_path, policy, seed, episodes, out):
    """Run evaluation episodes and report completion time and fairness."""
    config = _load_sim_config(preset, config_path)
    rows = _run_episodes(config, policy, seed, episodes)
    n_pickers = config.n_pickers
    chash = config_hash(config, policy=policy, seed=seed, episodes=episodes)
    lines = _header(chash)
    cols = ["episode", "seed", "completion_time_s", "workload_sd_kg"]
    cols += [f"workload_kg_{k}" for k in range(n_pickers)]
    lines.append(",".join(cols))
    for e, s, c, sd, w in rows:
        lines.append(",".join([str(e), str(s), f"{c:.6f}", f"{sd:.6f}"]
                              + [f"{x:.6f}" for x in w]))
    comp = np.array([r[2] for r in rows])
    sds = np.array([r[3] for r in rows])
    def ci(a):
        return 1.96 * a.std(ddof=1) / np.sqrt(len(a)) if len(a) > 1 else 0.0
    lines.append(",".join(["mean", "", f"{comp.mean():.6f}", f"{sds.mean():.6f}"]
                          + [""] * n_pickers))
    lines.append(",".join(["ci95_halfwidth", "", f"{ci(comp):.6f}",
                           f"{ci(sds):.6f}"] + [""] * n_pickers))
    text = "\n".join(lines) + "\n"
    if out == "-":
        click.echo(text, nl=False)
    else:
        with open(out, "w") as fh:
            fh.write(text)


@cli.command()
@click.option("--preset", type=click.Choice(["S", "M", "L", "XL"]), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--objective", type=click.Choice(["efficiency", "fairness", "morl"]),
              default="efficiency", show_default=True)
@click.option("--iterations", type=int, default=20, show_default=True,
              help="PPO iterations (single-objective) or generations (morl)")
@click.option("--tasks", type=int, default=3, show_default=True)
@click.option("--warmup-iterations", type=int, default=4, show_default=True)
@click.option("--task-iterations", type=int, default=2, show_default=True)
@click.option("--workers", type=int, default=4, show_default=True)
@click.option("--steps", type=int, default=400, show_default=True,
              help="steps per worker per iteration")
@click.option("--eval-episodes", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default="train-run", show_default=True)
def train(preset, config_path, objective, iterations, tasks, warmup_iterations,
          task_iterations, workers, steps, eval_episodes, seed, out):
    """Train a policy: single-objective PPO or the multi-objective loop."""
    config = _load_sim_config(preset, config_path)
    os.makedirs(out, exist_ok=True)
    ppo = PPOConfig(workers=workers, steps_per_worker=steps)
    chash = config_hash(config, objective=objective, seed=seed)
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump({"hash": chash, "version": _version(),
                   "objective": objective, "seed": seed,
                   "sim": describe(config)}, fh, indent=1)
    if objective == "morl":
        morl = MORLConfig(sim=config, ppo=ppo, n_tasks=tasks,
                          warmup_iterations=warmup_iterations,
                          task_iterations=task_iterations,
                          generations=iterations,
                          eval_episodes=eval_episodes, seed=seed, out_dir=out)
        archive, population, _ = run_morl(morl)
        click.echo(f"archive size {len(archive.members)}, "
                   f"population {len(population)}")
        return
    omega = (1.0, 0.0) if objective == "efficiency" else (0.0, 1.0)
    factory = picking_env_factory(
        config,
        zero_fairness_features=objective == "efficiency",
        zero_efficiency_features=objective == "fairness")
    lay = build_layout(config.n_aisles, config.depth)
    torch.manual_seed(seed)
    actor = AemoActor(lay.aisle_of[:lay.n_pick_nodes])
    critic = Critic()
    def save(it, actor_, critic_, row):
        save_checkpoint(os.path.join(out, "actor.npz"), actor_,
                        extra={"omega": list(omega), "iteration": it})
        save_checkpoint(os.path.join(out, "critic.npz"), critic_)
    train_ppo(actor, critic, factory, ppo, omega, iterations, seed=seed,
              csv_path=os.path.join(out, "learning_curve.csv"), callback=save)
    click.echo(f"checkpoint written to {os.path.join(out, 'actor.npz')}")


@cli.command()
@click.option("--run", "run_dir", type=click.Path(exists=True), required=True)
@click.option("--preset", type=click.Choice(["S", "M", "L", "XL"]), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--episodes", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--reference", nargs=2, type=float, default=(-10000.0, -1000.0),
              show_default=True)
@click.option("--out", type=click.Path(), default="pareto.csv", show_default=True)
def pareto(run_dir, preset, config_path, episodes, seed, reference, out):
    """Evaluate an archive's policies and emit the trade-off front."""
    config = _load_sim_config(preset, config_path)
    with open(os.path.join(run_dir, "archive.json")) as fh:
        archive_doc = json.load(fh)
    points = []
    for ckpt in archive_doc["checkpoints"]:
        rows = _run_episodes(config, f"checkpoint:{ckpt}", seed, episodes)
        comp = np.array([r[2] for r in rows])
        sds = np.array([r[3] for r in rows])
        points.append((ckpt, comp.mean(), sds.mean(),
                       1.96 * comp.std(ddof=1) / np.sqrt(len(comp)),
                       1.96 * sds.std(ddof=1) / np.sqrt(len(sds))))
    objective_points = [(-c, -s) for _, c, s, _, _ in points]
    hv = hypervolume_2d(objective_points, reference)
    flags = [not any(dominates(q, p) for q in objective_points if q != p)
             for p in objective_points]
    chash = config_hash(config, run=run_dir, episodes=episodes, seed=seed)
    lines = _header(chash)
    lines.append("checkpoint,picking_time_s,workload_sd_kg,ci95_time,ci95_sd,"
                 "non_dominated,hypervolume")
    for (ckpt, c, s, cc, cs), nd in zip(points, flags):
        lines.append(f"{ckpt},{c:.6f},{s:.6f},{cc:.6f},{cs:.6f},"
                     f"{str(nd).lower()},{hv:.6f}")
    with open(out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    plot = os.path.splitext(out)[0] + ".dat"
    with open(plot, "w") as fh:
        fh.write("\n".join(_header(chash)
                           + ["picking_time_s workload_sd_kg non_dominated"]
                           + [f"{c:.6f} {s:.6f} {int(nd)}"
                              for (_, c, s, _, _), nd in zip(points, flags)])
                 + "\n")
    click.echo(f"front written to {out} (hypervolume {hv:.3f})")


@cli.command("oracle-compare")
@click.option("--instances", "instances_dir", type=click.Path(exists=True),
              required=True)
@click.option("--out", type=click.Path(), default="oracle.csv", show_default=True)
def oracle_compare(instances_dir, out):
    """Compare baselines against the exact optimum on tiny instances."""
    files = sorted(f for f in os.listdir(instances_dir) if f.endswith(".json"))
    if not files:
        raise click.UsageError(f"no instance files in {instances_dir}")
    lines = [f"# version={_version()}"]
    lines.append("instance,optimum_s,greedy_s,vi_s,greedy_gap_pct,vi_gap_pct")
    for name in files:
        with open(os.path.join(instances_dir, name)) as fh:
            inst = DeterministicInstance.from_json(fh.read())
        best, _ = solve_exact(inst, "efficiency")
        results = {}
        for pol in ("greedy", "vi"):
            c, _, _ = simulate_deterministic(inst, make_policy(pol))
            results[pol] = c
        opt = best.completion_time
        lines.append(
            f"{name},{opt:.6f},{results['greedy']:.6f},{results['vi']:.6f},"
            f"{100 * (results['greedy'] / opt - 1):.3f},"
            f"{100 * (results['vi'] / opt - 1):.3f}")
    with open(out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    click.echo(f"comparison written to {out}")


@cli.command("gen-instances")
@click.option("--out", type=click.Path(), default="instances", show_default=True)
@click.option("--count", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--items", type=int, default=6, show_default=True)
@click.option("--amrs", type=int, default=3, show_default=True)
@click.option("--pickers", type=int, default=2, show_default=True)
def gen_instances(out, count, seed, items, amrs, pickers):
    """Write small deterministic instances for the exact solver."""
    os.makedirs(out, exist_ok=True)
    for i in range(count):
        inst = random_instance(RandomStream(seed + i), n_items=items,
                               n_amrs=amrs, n_pickers=pickers)
        with open(os.path.join(out, f"instance-{i:03d}.json"), "w") as fh:
            fh.write(inst.to_json())
    click.echo(f"{count} instances written to {out}")


def main():
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.Exit as exc:  # --help and friends
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except SimulationIntegrityError as exc:
        click.echo(f"simulation integrity fault: {exc}", err=True)
        sys.exit(3)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    sys.exit(0)


if __name__ == "__main__":
    main()
