"""Two-objective decision environment on top of the simulator.

At every decision point the requesting picker sees a per-node feature
matrix (23 efficiency features and 12 workload-fairness features) plus a
boolean action mask over the pick nodes.  Rewards are the negative elapsed
time and the change in the workload standard deviation between decision
points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .layout import MODE_AMR, MODE_PICKER
from .sampling import RandomStream, expected_pick_time
from .simulation import (
    AMR_MOVING,
    AMR_WAITING,
    DecisionPoint,
    EpisodeDone,
    MOVING,
    PICKING,
    SimConfig,
    SimState,
    WAITING_FOR_AMR,
    advance_to_next_request,
    apply_allocation,
    episode_metrics,
    init_episode,
    valid_actions,
)

N_EFFICIENCY = 23
N_FAIRNESS = 12
N_FEATURES = N_EFFICIENCY + N_FAIRNESS

NONE_SENTINEL = -10.0


@dataclass
class RewardVector:
    efficiency: float  # seconds, <= 0
    fairness: float    # kg, signed

    def as_array(self) -> np.ndarray:
        return np.array([self.efficiency, self.fairness])


def normalize_rewards(rv: RewardVector, scales: tuple[float, float]) -> RewardVector:
    se, sf = scales
    if se <= 0 or sf <= 0:
        raise ValueError("reward scales must be positive")
    return RewardVector(rv.efficiency / se, rv.fairness / sf)


def _expected_stop_pick_time(state: SimState, stop) -> float:
    if state.config.fixed_pick_time is not None:
        return state.config.fixed_pick_time
    product = state.placement[stop.node]
    return expected_pick_time(product, stop.n_items, state.config.product_model.pick_time)


def observe(state: SimState, requesting_picker: int) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix (n_pick_nodes, 35) and action mask for a decision point."""
    lay = state.layout
    n = lay.n_pick_nodes
    dp = lay.distances(MODE_PICKER).dist
    da = lay.distances(MODE_AMR).dist
    v_mu = state.config.picker_speed_mu
    a_mu = state.config.amr_speed_mu
    aisle = lay.aisle_of[:n]
    feats = np.zeros((n, N_FEATURES))
    me = state.pickers[requesting_picker]

    # --- efficiency block -------------------------------------------------
    f = feats  # columns 0..22
    if lay.is_pick[me.node]:
        f[me.node, 0] = 1.0
    f[:, 1] = dp[me.node, :n]

    amr_at = np.zeros(n)
    going_count = np.zeros(n)
    going_dist = np.full(n, np.inf)
    next_eta = np.full(n, np.inf)
    two_eta = np.full(n, np.inf)
    going_aisle = np.zeros(lay.n_aisles)
    waiting_aisle = np.zeros(lay.n_aisles)
    for amr in state.amrs:
        if lay.is_pick[amr.node]:
            amr_at[amr.node] = 1.0
        cur = amr.current_stop()
        if amr.status == AMR_MOVING and cur is not None:
            going_count[cur.node] += 1
            going_dist[cur.node] = min(going_dist[cur.node], da[amr.node, cur.node])
            going_aisle[aisle[cur.node]] += 1
        if amr.status == AMR_WAITING and cur is not None:
            waiting_aisle[aisle[cur.node]] += 1
        if cur is not None:
            t_cur = da[amr.node, cur.node] / a_mu + _expected_stop_pick_time(state, cur)
            nxt = amr.stop_ahead(1)
            if nxt is not None:
                eta = t_cur + da[cur.node, nxt.node] / a_mu
                next_eta[nxt.node] = min(next_eta[nxt.node], eta)
                two = amr.stop_ahead(2)
                if two is not None:
                    eta2 = (eta + _expected_stop_pick_time(state, nxt)
                            + da[nxt.node, two.node] / a_mu)
                    two_eta[two.node] = min(two_eta[two.node], eta2)
    f[:, 2] = amr_at
    f[:, 3] = going_count
    f[:, 4] = np.where(np.isfinite(going_dist), going_dist, NONE_SENTINEL)
    f[:, 5] = np.where(np.isfinite(next_eta), next_eta, NONE_SENTINEL)
    f[:, 6] = np.where(np.isfinite(two_eta), two_eta, NONE_SENTINEL)
    f[:, 7] = going_aisle[aisle]
    f[:, 8] = waiting_aisle[aisle]

    other_at = np.zeros(n)
    dest_dist = np.full(n, np.inf)
    picker_aisle = np.zeros(lay.n_aisles)
    detour = np.full(n, np.inf)
    detour_t = np.full(n, np.inf)
    for q in state.pickers:
        if q.id != requesting_picker and lay.is_pick[q.node]:
            other_at[q.node] = 1.0
        if q.destination is not None:
            dest_dist[q.destination] = min(dest_dist[q.destination],
                                           dp[q.node, q.destination])
            picker_aisle[aisle[q.destination]] += 1
        if q.id == requesting_picker:
            continue
        dest = q.destination if q.destination is not None else q.node
        through = dp[q.node, dest] + dp[dest, :n]
        np.minimum(detour, through, out=detour)
        t_pick_dest = 0.0
        stop = _stop_at(state, dest)
        if stop is not None:
            t_pick_dest = _expected_stop_pick_time(state, stop)
        np.minimum(detour_t, through / v_mu + t_pick_dest, out=detour_t)
    f[:, 9] = other_at
    f[:, 10] = np.where(np.isfinite(dest_dist), dest_dist, NONE_SENTINEL)
    f[:, 11] = picker_aisle[aisle]
    f[:, 12] = np.where(np.isfinite(detour), detour, 0.0)
    f[:, 13] = np.where(np.isfinite(detour_t), detour_t, 0.0)

    f[:, 14] = aisle / max(1, lay.n_aisles - 1)
    f[:, 15] = lay.depth_of[:n] / max(1, lay.depth - 1)

    # neighborhood: distances from each node to the follow-up stops of the
    # AMRs inbound to it, to picker destinations, and to unserved stops
    next_by_node: dict[int, list[int]] = {}
    two_by_node: dict[int, list[int]] = {}
    for amr in state.amrs:
        cur = amr.current_stop()
        if cur is None or amr.status not in (AMR_MOVING, AMR_WAITING):
            continue
        nxt = amr.stop_ahead(1)
        if nxt is not None:
            next_by_node.setdefault(cur.node, []).append(nxt.node)
        two = amr.stop_ahead(2)
        if two is not None:
            two_by_node.setdefault(cur.node, []).append(two.node)
    for col0, by_node in ((16, next_by_node), (18, two_by_node)):
        for node, targets in by_node.items():
            d = np.sort(dp[node, targets])
            f[node, col0] = d[0]
            if len(d) > 1:
                f[node, col0 + 1] = d[1]

    dests = [q.destination for q in state.pickers if q.destination is not None]
    if dests:
        f[:, 20] = dp[:n, dests].min(axis=1)

    claimed = {q.destination for q in state.pickers
               if q.destination is not None and q.status in (MOVING, WAITING_FOR_AMR)}
    unserved = sorted({amr.current_stop().node for amr in state.amrs
                       if amr.status in (AMR_MOVING, AMR_WAITING)
                       and amr.current_stop() is not None
                       and amr.current_stop().node not in claimed})
    if unserved:
        d = np.sort(dp[:n, unserved], axis=1)
        f[:, 21] = d[:, 0]
        if d.shape[1] > 1:
            f[:, 22] = d[:, 1]

    # --- fairness block ---------------------------------------------------
    g = feats[:, N_EFFICIENCY:]
    workloads = np.array([q.workload for q in state.pickers])
    mean_w = workloads.mean()
    for q in state.pickers:
        if lay.is_pick[q.node]:
            g[q.node, 0] = q.workload - mean_w
        if q.destination is not None:
            g[q.destination, 1] = q.workload - mean_w
    if state.placement:
        for v in range(n):
            g[v, 2] = state.placement[v].weight
    wait_mass = np.zeros(n)
    dest_mass = np.zeros(n)
    for amr in state.amrs:
        cur = amr.current_stop()
        if cur is None:
            continue
        mass = cur.mass
        if mass is None:
            mass = cur.n_items * state.placement[cur.node].weight
        if amr.status == AMR_WAITING:
            wait_mass[cur.node] += mass
        elif amr.status == AMR_MOVING:
            dest_mass[cur.node] += mass
    g[:, 3] = wait_mass
    g[:, 4] = dest_mass

    # workloads of the two pickers with the earliest expected arrival
    arrival = np.full((len(state.pickers), n), np.inf)
    for q in state.pickers:
        if q.destination is not None:
            arrival[q.id] = (dp[q.node, q.destination] + dp[q.destination, :n]) / v_mu
        else:
            arrival[q.id] = dp[q.node, :n] / v_mu
    order = np.argsort(arrival, axis=0, kind="stable")
    g[:, 5] = workloads[order[0]] - mean_w
    if len(state.pickers) > 1:
        g[:, 6] = workloads[order[1]] - mean_w

    g[:, 7] = me.workload - mean_w
    g[:, 8] = workloads.min() - mean_w
    g[:, 9] = np.percentile(workloads, 25) - mean_w
    g[:, 10] = np.percentile(workloads, 75) - mean_w
    g[:, 11] = workloads.max() - mean_w

    return feats, valid_actions(state, requesting_picker)


def _stop_at(state: SimState, node: int):
    for amr in state.amrs:
        for k in (0, 1):
            stop = amr.stop_ahead(k)
            if stop is not None and stop.node == node:
                return stop
    return None


FEATURE_NAMES_EFFICIENCY = [
    "requesting_picker_here",
    "requesting_picker_distance",
    "amr_here",
    "amrs_inbound_count",
    "amr_inbound_min_distance",
    "expected_time_next_destination",
    "expected_time_two_step_destination",
    "amrs_targeting_aisle",
    "amrs_waiting_in_aisle",
    "other_picker_here",
    "picker_inbound_min_distance",
    "pickers_targeting_aisle",
    "other_picker_detour_distance",
    "other_picker_detour_time",
    "aisle_position_scaled",
    "depth_position_scaled",
    "inbound_amr_next_stop_distance_1",
    "inbound_amr_next_stop_distance_2",
    "inbound_amr_two_step_distance_1",
    "inbound_amr_two_step_distance_2",
    "closest_picker_destination_distance",
    "unserved_stop_distance_1",
    "unserved_stop_distance_2",
]

FEATURE_NAMES_FAIRNESS = [
    "picker_here_workload_centered",
    "picker_inbound_workload_centered",
    "item_weight",
    "waiting_amr_mass",
    "inbound_amr_mass",
    "closest_picker_workload_centered_1",
    "closest_picker_workload_centered_2",
    "requesting_picker_workload_centered",
    "workload_min_centered",
    "workload_p25_centered",
    "workload_p75_centered",
    "workload_max_centered",
]


def feature_manifest() -> str:
    """JSON manifest freezing the feature ordering for serialized policies."""
    entries = []
    for i, name in enumerate(FEATURE_NAMES_EFFICIENCY):
        entries.append({"index": i, "block": "efficiency", "name": name})
    for i, name in enumerate(FEATURE_NAMES_FAIRNESS):
        entries.append({"index": N_EFFICIENCY + i, "block": "fairness", "name": name})
    return json.dumps(entries, indent=1)


class PickingEnv:
    """reset/observe/step wrapper used by training and evaluation."""

    def __init__(self, config: SimConfig, zero_fairness_features: bool = False,
                 zero_efficiency_features: bool = False):
        self.config = config
        self.zero_fairness_features = zero_fairness_features
        self.zero_efficiency_features = zero_efficiency_features
        self.state: SimState | None = None
        self._t_prev = 0.0
        self._sd_prev = 0.0
        self._picker: int | None = None

    def reset(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        # a tiny episode can finish on the initial allocations alone, with
        # no decision ever reaching the policy; skip to the next seed then
        for attempt in range(100):
            self.state = init_episode(self.config,
                                      RandomStream(seed + attempt * 15485863))
            self._t_prev = 0.0
            self._sd_prev = 0.0
            outcome = advance_to_next_request(self.state)
            if isinstance(outcome, DecisionPoint):
                self._picker = outcome.picker
                return self._obs()
        raise RuntimeError("no seed produced an episode with decision points")

    def _obs(self):
        feats, mask = observe(self.state, self._picker)
        if self.zero_fairness_features or self.zero_efficiency_features:
            feats = feats.copy()
            if self.zero_fairness_features:
                feats[:, N_EFFICIENCY:] = 0.0
            if self.zero_efficiency_features:
                feats[:, :N_EFFICIENCY] = 0.0
        return feats, mask

    def _workload_sd(self) -> float:
        return float(np.std([p.workload for p in self.state.pickers]))

    def step(self, action: int):
        """Returns (reward, obs, mask, done).  obs/mask are None when done."""
        apply_allocation(self.state, self._picker, int(action))
        outcome = advance_to_next_request(self.state)
        t_now = self.state.clock if not isinstance(outcome, EpisodeDone) else outcome.time
        sd_now = self._workload_sd()
        reward = RewardVector(self._t_prev - t_now, self._sd_prev - sd_now)
        self._t_prev = t_now
        self._sd_prev = sd_now
        if isinstance(outcome, EpisodeDone):
            return reward, None, None, True
        self._picker = outcome.picker
        feats, mask = self._obs()
        return reward, feats, mask, False

    @property
    def requesting_picker(self) -> int:
        return self._picker

    def metrics(self):
        return episode_metrics(self.state)
