"""Experiment configuration: scenario presets, JSON configs, hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json

from .simulation import SimConfig

# Standard warehouse scenarios: aisles, depth, pickers, AMRs, total picks.
PRESETS = {
    "S": (10, 10, 10, 25, 5000),
    "M": (15, 15, 20, 50, 7500),
    "L": (25, 25, 30, 90, 7500),
    "XL": (35, 40, 60, 180, 15000),
}


def preset_config(name: str) -> SimConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}, choose from {sorted(PRESETS)}")
    aisles, depth, pickers, amrs, picks = PRESETS[name]
    return SimConfig(n_aisles=aisles, depth=depth, n_pickers=pickers,
                     n_amrs=amrs, total_picks=picks)


def sim_config_from_json(text: str) -> SimConfig:
    doc = json.loads(text)
    allowed = {f.name for f in dataclasses.fields(SimConfig)}
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return SimConfig(**doc)


def describe(config: SimConfig) -> dict:
    return {
        "n_aisles": config.n_aisles,
        "depth": config.depth,
        "n_pickers": config.n_pickers,
        "n_amrs": config.n_amrs,
        "total_picks": config.total_picks,
        "diverse_start": config.diverse_start,
        "pickrun_len": [config.pickrun_len_lo, config.pickrun_len_hi],
        "picker_speed": [config.picker_speed_mu, config.picker_speed_sigma],
        "amr_speed": [config.amr_speed_mu, config.amr_speed_sigma],
        "fixed_pick_time": config.fixed_pick_time,
        "disruptions": config.disruptions,
        "overtakes": config.overtakes,
    }


def config_hash(config: SimConfig, **extra) -> str:
    doc = {**describe(config), **extra}
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
