"""PPO training under weighted-sum scalarization of the two objectives.

Rollouts are collected from several independently seeded environments,
advantages come from GAE, and the clipped surrogate objective with an
entropy bonus is optimized with Adam.  The critic's two value heads are
combined with the scalarization weights everywhere a scalar value is
needed, so training with weights (1, 0) degenerates to pure-efficiency
training.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .env import PickingEnv, RewardVector, normalize_rewards
from .nets import argmax_action, masked_log_softmax, sample_action
from .simulation import SimConfig


class TrainingFault(RuntimeError):
    """Non-finite loss or gradient; carries a diagnostic payload."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class PPOConfig:
    clip: float = 0.2
    c_ent: float = 0.01
    lr: float = 5e-4
    epochs: int = 3
    minibatch: int = 128
    gamma: float = 0.995
    gae_lambda: float = 0.95
    workers: int = 4
    steps_per_worker: int = 400
    reward_scales: tuple[float, float] = (100.0, 10.0)

    def __post_init__(self):
        if not (0 < self.clip < 1):
            raise ValueError("clip must be in (0, 1)")
        if not (0 < self.gamma < 1):
            raise ValueError("gamma must be in (0, 1)")
        for name in ("c_ent", "lr", "epochs", "minibatch", "workers",
                     "steps_per_worker", "gae_lambda"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class RolloutBatch:
    features: np.ndarray      # (T, n_nodes, 35) float32
    masks: np.ndarray         # (T, n_nodes) bool
    actions: np.ndarray       # (T,) int64
    log_probs: np.ndarray     # (T,) float32, behavior policy
    rewards: np.ndarray       # (T,) float32, scalarized normalized
    values: np.ndarray        # (T,) float32, scalarized critic estimates
    dones: np.ndarray         # (T,) bool
    bootstrap: np.ndarray     # (n_segments,) value after the last step
    segments: list[tuple[int, int]]   # [start, end) per worker
    episode_rewards: list[np.ndarray] = field(default_factory=list)  # raw, per episode


def scalarize(omega, vec) -> float:
    return float(omega[0] * vec[0] + omega[1] * vec[1])


def collect_rollouts(actor, critic, env_factory, ppo: PPOConfig, omega,
                     seed: int) -> RolloutBatch:
    """Run each worker env for a fixed step budget, sampling actions."""
    feats, masks, acts, lps, rews, vals, dones = [], [], [], [], [], [], []
    bootstrap = []
    segments = []
    episode_rewards = []
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for w in range(ppo.workers):
            env = env_factory(w)
            ep_seed = seed * 100003 + w * 1009
            obs, mask = env.reset(ep_seed)
            ep_raw = np.zeros(2)
            start = len(acts)
            for _ in range(ppo.steps_per_worker):
                ft = torch.from_numpy(np.ascontiguousarray(obs, dtype=np.float32))
                mt = torch.from_numpy(np.ascontiguousarray(mask))
                lp = actor(ft, mt)
                a = sample_action(lp, rng)
                v = scalarize(omega, critic(ft).numpy())
                reward, obs2, mask2, done = env.step(a)
                ep_raw += reward.as_array()
                r = scalarize(omega, normalize_rewards(
                    reward, ppo.reward_scales).as_array())
                feats.append(np.asarray(obs, dtype=np.float32))
                masks.append(np.asarray(mask, dtype=bool))
                acts.append(a)
                lps.append(float(lp[a]))
                rews.append(r)
                vals.append(v)
                dones.append(done)
                if done:
                    episode_rewards.append(ep_raw.copy())
                    ep_raw[:] = 0.0
                    ep_seed += 1
                    obs, mask = env.reset(ep_seed)
                else:
                    obs, mask = obs2, mask2
            if dones[-1]:
                bootstrap.append(0.0)
            else:
                ft = torch.from_numpy(np.ascontiguousarray(obs, dtype=np.float32))
                bootstrap.append(scalarize(omega, critic(ft).numpy()))
            segments.append((start, len(acts)))
    return RolloutBatch(
        features=np.stack(feats), masks=np.stack(masks),
        actions=np.array(acts, dtype=np.int64),
        log_probs=np.array(lps, dtype=np.float32),
        rewards=np.array(rews, dtype=np.float32),
        values=np.array(vals, dtype=np.float32),
        dones=np.array(dones, dtype=bool),
        bootstrap=np.array(bootstrap, dtype=np.float32),
        segments=segments,
        episode_rewards=episode_rewards)


def compute_advantages(batch: RolloutBatch, gamma: float,
                       lam: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE advantages (normalized) and value targets (not normalized)."""
    adv = np.zeros(len(batch.actions), dtype=np.float64)
    for seg_idx, (lo, hi) in enumerate(batch.segments):
        running = 0.0
        next_value = float(batch.bootstrap[seg_idx])
        for t in range(hi - 1, lo - 1, -1):
            nonterminal = 0.0 if batch.dones[t] else 1.0
            delta = (batch.rewards[t] + gamma * next_value * nonterminal
                     - batch.values[t])
            running = delta + gamma * lam * nonterminal * running
            adv[t] = running
            next_value = float(batch.values[t])
    returns = adv + batch.values
    std = adv.std()
    normalized = (adv - adv.mean()) / (std if std > 1e-8 else 1.0)
    return normalized.astype(np.float32), returns.astype(np.float32)


def ppo_update(actor, critic, optimizer, batch: RolloutBatch,
               ppo: PPOConfig, omega, rng: np.random.Generator) -> dict:
    """3 epochs of clipped-surrogate minibatch updates; returns loss stats."""
    adv, returns = compute_advantages(batch, ppo.gamma, ppo.gae_lambda)
    n = len(batch.actions)
    feats = torch.from_numpy(batch.features)
    masks = torch.from_numpy(batch.masks)
    actions = torch.from_numpy(batch.actions)
    old_lp = torch.from_numpy(batch.log_probs)
    adv_t = torch.from_numpy(adv)
    ret_t = torch.from_numpy(returns)
    omega_t = torch.tensor(list(omega), dtype=torch.float32)

    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "batches": 0}
    for _ in range(ppo.epochs):
        order = rng.permutation(n)
        for s in range(0, n, ppo.minibatch):
            idx = torch.from_numpy(order[s:s + ppo.minibatch])
            lp_all = actor(feats[idx], masks[idx])
            lp = lp_all.gather(1, actions[idx, None]).squeeze(1)
            ratio = torch.exp(lp - old_lp[idx])
            a = adv_t[idx]
            surrogate = torch.minimum(
                ratio * a,
                torch.clamp(ratio, 1 - ppo.clip, 1 + ppo.clip) * a)
            p = torch.exp(lp_all)
            entropy = -(p * lp_all.clamp_min(-1e30)).sum(dim=1).mean()
            v = (critic(feats[idx]) * omega_t).sum(dim=1)
            value_loss = torch.mean((v - ret_t[idx]) ** 2)
            loss = -(surrogate.mean() + ppo.c_ent * entropy) + value_loss
            if not torch.isfinite(loss):
                raise TrainingFault("non-finite loss", {
                    "policy": float(surrogate.mean().detach()),
                    "value": float(value_loss.detach()),
                    "entropy": float(entropy.detach()),
                    "minibatch_start": s,
                })
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            stats["policy_loss"] += float(-surrogate.mean().detach())
            stats["value_loss"] += float(value_loss.detach())
            stats["entropy"] += float(entropy.detach())
            stats["batches"] += 1
    b = max(1, stats.pop("batches"))
    return {k: v / b for k, v in stats.items()}


def make_optimizer(actor, critic, ppo: PPOConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        list(actor.parameters()) + list(critic.parameters()), lr=ppo.lr)


def train_ppo(actor, critic, env_factory, ppo: PPOConfig, omega,
              iterations: int, seed: int, csv_path: str | None = None,
              optimizer=None, callback=None) -> list[dict]:
    """Iterate collect/update; returns per-iteration statistics."""
    if optimizer is None:
        optimizer = make_optimizer(actor, critic, ppo)
    rng = np.random.default_rng(seed ^ 0x5EED)
    rows = []
    writer = fh = None
    if csv_path is not None:
        fh = open(csv_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "episodes", "mean_reward_efficiency",
                         "mean_reward_fairness", "policy_loss", "value_loss",
                         "entropy"])
    try:
        for it in range(iterations):
            batch = collect_rollouts(actor, critic, env_factory, ppo, omega,
                                     seed + it)
            stats = ppo_update(actor, critic, optimizer, batch, ppo, omega, rng)
            eps = batch.episode_rewards
            mean_ep = (np.mean(eps, axis=0) if eps
                       else np.array([np.nan, np.nan]))
            row = {"iteration": it, "episodes": len(eps),
                   "mean_reward_efficiency": float(mean_ep[0]),
                   "mean_reward_fairness": float(mean_ep[1]), **stats}
            rows.append(row)
            if writer is not None:
                writer.writerow([row["iteration"], row["episodes"],
                                 row["mean_reward_efficiency"],
                                 row["mean_reward_fairness"],
                                 row["policy_loss"], row["value_loss"],
                                 row["entropy"]])
                fh.flush()
            if callback is not None:
                callback(it, actor, critic, row)
    finally:
        if fh is not None:
            fh.close()
    return rows


def evaluate_policy(actor, env_factory, episodes: int,
                    seed: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Greedy-action evaluation; returns mean and per-episode reward vectors."""
    results = []
    env = env_factory(0)
    with torch.no_grad():
        for e in range(episodes):
            obs, mask = env.reset(seed + e)
            total = np.zeros(2)
            done = False
            while not done:
                ft = torch.from_numpy(np.ascontiguousarray(obs, dtype=np.float32))
                mt = torch.from_numpy(np.ascontiguousarray(mask))
                a = argmax_action(actor(ft, mt))
                reward, obs, mask, done = env.step(a)
                total += reward.as_array()
            results.append(total)
    return np.mean(results, axis=0), results


def picking_env_factory(config: SimConfig, zero_fairness_features: bool = False,
                        zero_efficiency_features: bool = False):
    def factory(worker: int) -> PickingEnv:
        return PickingEnv(config, zero_fairness_features=zero_fairness_features,
                          zero_efficiency_features=zero_efficiency_features)
    return factory
