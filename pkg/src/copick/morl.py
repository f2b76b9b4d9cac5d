"""Evolutionary multi-objective training loop.

A set of PPO tasks, each a (policy, weight vector) pair, is trained in
bursts.  After every burst the policy is evaluated and fed into a Pareto
archive.  Between generations a four-parameter hyperbolic model predicts
how each candidate policy would move under each scalarization weight, and
the next tasks are the candidates with the best predicted hypervolume
gain minus a sparsity penalty.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import curve_fit

from .layout import build_layout
from .nets import AemoActor, Critic, load_checkpoint, save_checkpoint
from .simulation import SimConfig
from .training import (
    PPOConfig,
    evaluate_policy,
    picking_env_factory,
    train_ppo,
)


def dominates(a, b) -> bool:
    """a dominates b under maximization."""
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a >= b) and np.any(a > b))


@dataclass
class PolicyRecord:
    id: int
    point: np.ndarray           # (mean efficiency reward, mean fairness reward)
    checkpoint: str
    omega: tuple[float, float]


class ParetoArchive:
    """Non-dominated set of evaluated policies."""

    def __init__(self):
        self.members: list[PolicyRecord] = []

    def insert(self, rec: PolicyRecord) -> bool:
        for m in self.members:
            if dominates(m.point, rec.point) or np.array_equal(m.point, rec.point):
                return False
        self.members = [m for m in self.members if not dominates(rec.point, m.point)]
        self.members.append(rec)
        return True

    def points(self) -> np.ndarray:
        return (np.array([m.point for m in self.members])
                if self.members else np.zeros((0, 2)))

    def check_invariant(self):
        for i, a in enumerate(self.members):
            for j, b in enumerate(self.members):
                if i != j and dominates(a.point, b.point):
                    raise AssertionError("archive contains a dominated point")

    def to_json(self) -> str:
        return json.dumps({
            "points": [m.point.tolist() for m in self.members],
            "checkpoints": [m.checkpoint for m in self.members],
            "omegas": [list(m.omega) for m in self.members],
        }, indent=1)


def hypervolume_2d(points, reference) -> float:
    """Exact dominated area between the points and the reference corner."""
    pts = [tuple(p) for p in np.asarray(points).reshape(-1, 2)
           if p[0] > reference[0] and p[1] > reference[1]]
    front = [p for p in pts
             if not any(dominates(q, p) for q in pts)]
    front = sorted(set(front), key=lambda p: -p[0])
    hv = 0.0
    prev_y = reference[1]
    for x, y in front:
        if y > prev_y:
            hv += (x - reference[0]) * (y - prev_y)
            prev_y = y
    return hv


def sparsity(points) -> float:
    """Mean over objectives of the mean squared gap between neighbors."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        return 0.0
    pts = pts[np.argsort(pts[:, 0])]
    gaps = np.diff(pts, axis=0) ** 2
    return float(gaps.mean(axis=0).mean())


# --- improvement prediction ------------------------------------------------

def _hyperbolic(x, big_a, a, b, c):
    return big_a / (1.0 + np.exp(np.clip(-a * (x - b), -60, 60))) + c


@dataclass
class HyperbolicModel:
    """Predicts the post-training objective point as a function of omega[0]."""

    params: np.ndarray | None            # (2, 4) or None when falling back
    records: list = field(default_factory=list)

    def predict(self, omega0: float) -> np.ndarray:
        if self.params is not None:
            return np.array([_hyperbolic(omega0, *self.params[j])
                             for j in range(2)])
        # nearest-neighbor fallback on the training weight
        rec = min(self.records, key=lambda r: abs(r[0][0] - omega0))
        return np.asarray(rec[2], dtype=float)


def fit_hyperbolic(history, point, radius: float = 0.1,
                   scales=(100.0, 10.0)) -> HyperbolicModel:
    """Fit f(omega) per objective from records starting near ``point``.

    ``history`` holds (omega, before, after) tuples; the neighborhood is
    measured between ``before`` and ``point`` in scale-normalized
    objective space.
    """
    point = np.asarray(point, dtype=float)
    scales = np.asarray(scales, dtype=float)
    near = [r for r in history
            if np.linalg.norm((np.asarray(r[1]) - point) / scales) <= radius]
    if len(near) < 4:
        fallback = near if near else list(history)
        if not fallback:
            raise ValueError("no history records to predict from")
        return HyperbolicModel(params=None, records=fallback)
    xs = np.array([r[0][0] for r in near], dtype=float)
    params = np.zeros((2, 4))
    for j in range(2):
        ys = np.array([r[2][j] for r in near], dtype=float)
        span = ys.max() - ys.min()
        guess = [span if span > 0 else 1.0, 10.0, 0.5, ys.min()]
        try:
            popt, _ = curve_fit(_hyperbolic, xs, ys, p0=guess, maxfev=5000)
        except RuntimeError:
            popt = np.array(guess)
        if not np.all(np.isfinite(popt)):
            popt = np.array(guess)
        params[j] = popt
    return HyperbolicModel(params=params, records=near)


def weight_grid(step: float = 0.05) -> list[tuple[float, float]]:
    n = round(1.0 / step)
    return [(i * step, 1.0 - i * step) for i in range(n + 1)]


def select_tasks(population: list[PolicyRecord], archive: ParetoArchive,
                 models: dict[int, HyperbolicModel], n: int,
                 reference, beta: float = 1.0,
                 step: float = 0.05) -> list[tuple[PolicyRecord, tuple[float, float]]]:
    """Top-n (policy, omega) candidates by predicted archive improvement."""
    base_points = archive.points()
    base_hv = hypervolume_2d(base_points, reference)
    scored = []
    for rec in population:
        model = models.get(rec.id)
        if model is None:
            continue
        for omega in weight_grid(step):
            predicted = model.predict(omega[0])
            pts = (np.vstack([base_points, predicted])
                   if len(base_points) else predicted.reshape(1, 2))
            gain = hypervolume_2d(pts, reference) - base_hv
            front = [p for p in pts if not any(dominates(q, p) for q in pts)]
            score = gain - beta * sparsity(front)
            scored.append((score, predicted[0], rec, omega))
    scored.sort(key=lambda s: (-s[0], -s[1], s[2].id, s[3][0]))
    return [(rec, omega) for _, _, rec, omega in scored[:n]]


# --- outer loop ------------------------------------------------------------

@dataclass
class MORLConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    n_tasks: int = 3
    warmup_iterations: int = 4
    task_iterations: int = 2
    generations: int = 2
    eval_episodes: int = 20
    reference: tuple[float, float] = (-10000.0, -1000.0)
    neighborhood_radius: float = 0.1
    beta: float = 1.0
    weight_grid_step: float = 0.05
    seed: int = 0
    out_dir: str = "morl-run"


def initial_weights(n: int) -> list[tuple[float, float]]:
    if n == 1:
        return [(0.5, 0.5)]
    return [(i / (n - 1), 1.0 - i / (n - 1)) for i in range(n)]


def _fresh_nets(layout, seed: int):
    torch.manual_seed(seed)
    actor = AemoActor(layout.aisle_of[:layout.n_pick_nodes])
    critic = Critic()
    return actor, critic


def run_morl(config: MORLConfig):
    """Warm-up plus evolutionary generations; returns (archive, population, history)."""
    os.makedirs(config.out_dir, exist_ok=True)
    layout = build_layout(config.sim.n_aisles, config.sim.depth)
    factory = picking_env_factory(config.sim)
    archive = ParetoArchive()
    population: list[PolicyRecord] = []
    history: list[tuple] = []   # (omega, before point, after point, policy id)
    next_id = 0

    def checkpoint_path(pid: int) -> str:
        return os.path.join(config.out_dir, f"policy-{pid:04d}.npz")

    def train_and_record(actor, critic, omega, iterations, before, seed):
        nonlocal next_id
        csv_path = os.path.join(config.out_dir, f"train-{next_id:04d}.csv")
        train_ppo(actor, critic, factory, config.ppo, omega, iterations,
                  seed=seed, csv_path=csv_path)
        point, _ = evaluate_policy(actor, factory, config.eval_episodes,
                                   seed=config.seed + 777)
        rec = PolicyRecord(id=next_id, point=point,
                           checkpoint=checkpoint_path(next_id), omega=omega)
        save_checkpoint(rec.checkpoint, actor,
                        extra={"omega": list(omega), "point": point.tolist()})
        save_checkpoint(rec.checkpoint + ".critic", critic)
        next_id += 1
        population.append(rec)
        archive.insert(rec)
        archive.check_invariant()
        history.append((omega, np.asarray(before), point, rec.id))
        return rec

    # warm-up: evenly spread weights, fresh policies
    warmup_weights = initial_weights(config.n_tasks)
    for i, omega in enumerate(warmup_weights):
        actor, critic = _fresh_nets(layout, config.seed + i)
        before, _ = evaluate_policy(actor, factory, config.eval_episodes,
                                    seed=config.seed + 777)
        train_and_record(actor, critic, omega, config.warmup_iterations,
                         before, seed=config.seed + 13 * i)

    # evolutionary generations
    for gen in range(config.generations):
        models = {}
        for rec in population:
            try:
                models[rec.id] = fit_hyperbolic(
                    [(h[0], h[1], h[2]) for h in history], rec.point,
                    radius=config.neighborhood_radius,
                    scales=config.ppo.reward_scales)
            except ValueError:  # pragma: no cover - history is never empty here
                continue
        tasks = select_tasks(population, archive, models, config.n_tasks,
                             config.reference, beta=config.beta,
                             step=config.weight_grid_step)
        for t, (parent, omega) in enumerate(tasks):
            actor, critic = _fresh_nets(layout, 0)
            load_checkpoint(parent.checkpoint, actor)
            load_checkpoint(parent.checkpoint + ".critic", critic)
            train_and_record(actor, critic, omega, config.task_iterations,
                             parent.point,
                             seed=config.seed + 1000 * (gen + 1) + t)

    with open(os.path.join(config.out_dir, "archive.json"), "w") as fh:
        fh.write(archive.to_json())
    return archive, population, history
