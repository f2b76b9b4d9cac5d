"""Actor and critic networks for the allocation policy.

The actor embeds each node's efficiency and fairness features separately,
mixes in a mean-pooled embedding of the node's aisle, and emits one logit
per node; invalid nodes are masked to -inf before the softmax.  The critic
shares the per-node encoder structure and sum-pools to two value heads,
one per objective.  An ablation actor without the aisle aggregation is
included for comparison runs.
"""

from __future__ import annotations

import hashlib
import io
import json

import numpy as np
import torch
from torch import nn

from .env import N_EFFICIENCY, N_FAIRNESS, feature_manifest

LEAKY_SLOPE = 0.01


def _init_linear(layer: nn.Linear):
    # uniform in +-sqrt(6 / (fan_in + fan_out))
    bound = float(np.sqrt(6.0 / (layer.in_features + layer.out_features)))
    nn.init.uniform_(layer.weight, -bound, bound)
    nn.init.zeros_(layer.bias)


def _mlp(sizes: list[int], final_activation: bool) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        lin = nn.Linear(a, b)
        _init_linear(lin)
        layers.append(lin)
        if i < len(sizes) - 2 or final_activation:
            layers.append(nn.LeakyReLU(LEAKY_SLOPE))
    return nn.Sequential(*layers)


def aisle_pool_matrix(aisle_of_pick_nodes: np.ndarray) -> torch.Tensor:
    """(n_nodes, n_nodes) matrix replacing node rows by their aisle mean."""
    aisles = np.asarray(aisle_of_pick_nodes)
    n = len(aisles)
    m = np.zeros((n, n), dtype=np.float32)
    for a in np.unique(aisles):
        idx = np.flatnonzero(aisles == a)
        m[np.ix_(idx, idx)] = 1.0 / len(idx)
    return torch.from_numpy(m)


class AemoActor(nn.Module):
    """Aisle-aware actor: per-node logits from node plus aisle embeddings."""

    kind = "aemo-actor"

    def __init__(self, aisle_of_pick_nodes: np.ndarray):
        super().__init__()
        self.aisle_of = np.asarray(aisle_of_pick_nodes, dtype=np.int64)
        pool = aisle_pool_matrix(self.aisle_of)
        self.register_buffer("pool", pool)
        self.enc_eff = _mlp([N_EFFICIENCY, 64, 64, 16], final_activation=True)
        self.enc_fair = _mlp([N_FAIRNESS, 64, 64, 16], final_activation=True)
        self.mix_eff = _mlp([32, 64, 16], final_activation=True)
        self.mix_fair = _mlp([32, 64, 16], final_activation=True)
        self.head = _mlp([32, 16, 1], final_activation=False)

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        """features: (..., n_nodes, 35) -> logits (..., n_nodes)."""
        if features.shape[-1] != N_EFFICIENCY + N_FAIRNESS:
            raise ValueError(f"expected {N_EFFICIENCY + N_FAIRNESS} features, "
                             f"got {features.shape[-1]}")
        xe = features[..., :N_EFFICIENCY]
        xf = features[..., N_EFFICIENCY:]
        out = []
        for enc, mix, x in ((self.enc_eff, self.mix_eff, xe),
                            (self.enc_fair, self.mix_fair, xf)):
            e = enc(x)                       # (..., n_nodes, 16)
            aisle = self.pool @ e            # aisle mean broadcast per node
            out.append(mix(torch.cat([e, aisle], dim=-1)))
        return self.head(torch.cat(out, dim=-1)).squeeze(-1)

    def forward(self, features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return masked_log_softmax(self.logits(features), mask)


class InvFFActor(nn.Module):
    """Ablation actor: plain per-node MLP, no aisle aggregation."""

    kind = "invff-actor"

    def __init__(self, aisle_of_pick_nodes: np.ndarray):
        super().__init__()
        self.aisle_of = np.asarray(aisle_of_pick_nodes, dtype=np.int64)
        self.net = _mlp([N_EFFICIENCY + N_FAIRNESS, 64, 64, 16, 1],
                        final_activation=False)

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != N_EFFICIENCY + N_FAIRNESS:
            raise ValueError(f"expected {N_EFFICIENCY + N_FAIRNESS} features, "
                             f"got {features.shape[-1]}")
        return self.net(features).squeeze(-1)

    def forward(self, features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return masked_log_softmax(self.logits(features), mask)


class Critic(nn.Module):
    """Permutation-invariant critic with one value head per objective."""

    kind = "critic"

    def __init__(self):
        super().__init__()
        self.enc_eff = _mlp([N_EFFICIENCY, 64, 64, 16], final_activation=True)
        self.enc_fair = _mlp([N_FAIRNESS, 64, 64, 16], final_activation=True)
        self.shared = _mlp([32, 16], final_activation=True)
        self.out = nn.Linear(16, 2)
        _init_linear(self.out)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """features: (..., n_nodes, 35) -> values (..., 2)."""
        e = self.enc_eff(features[..., :N_EFFICIENCY])
        f = self.enc_fair(features[..., N_EFFICIENCY:])
        h = self.shared(torch.cat([e, f], dim=-1))
        return self.out(h.sum(dim=-2))


def masked_log_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Log-probabilities with invalid entries at -inf; stable under +-100 logits."""
    neg_inf = torch.finfo(logits.dtype).min
    masked = torch.where(mask.bool(), logits, torch.full_like(logits, neg_inf))
    return torch.log_softmax(masked, dim=-1)


def sample_action(log_probs: torch.Tensor, rng: np.random.Generator) -> int:
    p = torch.exp(log_probs).detach().cpu().numpy().astype(np.float64)
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def argmax_action(log_probs: torch.Tensor) -> int:
    return int(torch.argmax(log_probs).item())


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# --- checkpoints -----------------------------------------------------------

def _manifest(module: nn.Module) -> dict:
    # the aisle pooling buffer is layout-specific and excluded so that a
    # policy can be evaluated on warehouses it was not trained on
    return {
        "kind": module.kind,
        "shapes": {k: list(v.shape) for k, v in module.state_dict().items()
                   if k != "pool"},
        "feature_manifest_sha256": hashlib.sha256(
            feature_manifest().encode()).hexdigest(),
    }


def save_checkpoint(path, module: nn.Module, extra: dict | None = None) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()
              if k != "pool"}
    meta = _manifest(module)
    if extra:
        meta["extra"] = extra
    buf = io.BytesIO()
    np.savez(buf, __manifest__=np.frombuffer(
        json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, module: nn.Module) -> dict:
    """Load parameters in place; returns the stored manifest.

    Refuses checkpoints whose architecture or feature-manifest hash does
    not match the given module.
    """
    with np.load(path) as data:
        meta = json.loads(bytes(data["__manifest__"]).decode())
        expected = _manifest(module)
        for key in ("kind", "shapes", "feature_manifest_sha256"):
            if meta.get(key) != expected[key]:
                raise ValueError(f"checkpoint mismatch on {key!r}")
        state = {k: torch.from_numpy(np.array(data[k]))
                 for k in meta["shapes"]}
    module.load_state_dict(state, strict=False)
    return meta
