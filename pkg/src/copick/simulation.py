"""Discrete-event engine for the collaborative picking system.

Pickers and AMRs move node-by-node through the warehouse graph; every
transition is an event.  AMRs work through their pickruns in order and
wait at each stop until a picker arrives and loads the items.  The engine
runs until some picker becomes idle and requests a new destination, which
is where a policy takes over.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .layout import MODE_AMR, MODE_PICKER, WarehouseLayout, build_layout, shortest_path
from .sampling import (
    DEFAULT_PRODUCT_MODEL,
    ProductModel,
    RandomStream,
    expected_pick_time,
    generate_product_placement,
    sample_amr_speed,
    sample_disruption_duration,
    sample_overtake_delay,
    sample_pick_time,
    sample_picker_speed,
)


class SimulationIntegrityError(RuntimeError):
    """The event queue drained with unpicked items left: a simulator bug."""


class InvalidActionError(ValueError):
    """A policy proposed a target outside the valid action set."""


# picker statuses
MOVING = "moving"
PICKING = "picking"
IDLE = "idle-awaiting-assignment"
WAITING_FOR_AMR = "waiting-for-amr"

# AMR statuses
AMR_MOVING = "moving"
AMR_WAITING = "waiting-for-picker"
AMR_LOADING = "loading"
AMR_TO_BASE = "to-base"
AMR_IDLE = "idle"


@dataclass
class Stop:
    node: int
    n_items: int
    mass: float | None = None  # resolved from the product placement if None


@dataclass
class Pickrun:
    stops: list[Stop]
    amr: int | None = None

    def total_items(self) -> int:
        return sum(s.n_items for s in self.stops)


@dataclass
class PickerState:
    id: int
    node: int
    destination: int | None = None
    speed: float = 0.0
    workload: float = 0.0  # kg lifted so far
    picks_done: int = 0
    status: str = IDLE
    path: list[int] = field(default_factory=list)
    hop: int = 0


@dataclass
class AmrState:
    id: int
    node: int
    pickrun: Pickrun | None = None
    cursor: int = 0
    speed: float = 0.0
    status: str = AMR_IDLE
    path: list[int] = field(default_factory=list)
    hop: int = 0
    wait_since: float = 0.0

    def current_stop(self) -> Stop | None:
        if self.pickrun is not None and self.cursor < len(self.pickrun.stops):
            return self.pickrun.stops[self.cursor]
        return None

    def stop_ahead(self, k: int) -> Stop | None:
        """Stop k positions past the current one (k=1: next destination)."""
        if self.pickrun is not None and self.cursor + k < len(self.pickrun.stops):
            return self.pickrun.stops[self.cursor + k]
        return None


@dataclass
class SimConfig:
    n_aisles: int = 10
    depth: int = 10
    n_pickers: int = 10
    n_amrs: int = 25
    total_picks: int = 5000
    diverse_start: bool = True
    pickrun_len_lo: int = 15
    pickrun_len_hi: int = 25
    product_model: ProductModel = field(default_factory=lambda: DEFAULT_PRODUCT_MODEL)
    picker_speed_mu: float = 1.25
    picker_speed_sigma: float = 0.15
    amr_speed_mu: float = 1.5
    amr_speed_sigma: float = 0.15
    fixed_pick_time: float | None = None  # None: stochastic per-product times
    disruptions: bool = True
    overtakes: bool = True
    log_events: bool = False
    # instance-style overrides (deterministic evaluation)
    pickruns: list[Pickrun] | None = None
    picker_start_nodes: list[int] | None = None
    amr_start_nodes: list[int] | None = None
    pickers_request_at_start: bool = False

    def deterministic(self) -> "SimConfig":
        import copy

        c = copy.copy(self)
        c.picker_speed_sigma = 0.0
        c.amr_speed_sigma = 0.0
        c.fixed_pick_time = 7.5 if c.fixed_pick_time is None else c.fixed_pick_time
        c.disruptions = False
        c.overtakes = False
        c.diverse_start = False
        return c


@dataclass
class DecisionPoint:
    picker: int
    time: float


@dataclass
class EpisodeDone:
    time: float


class SimState:
    """Mutable world state plus the event queue."""

    def __init__(self, config: SimConfig, layout: WarehouseLayout, rs: RandomStream):
        self.config = config
        self.layout = layout
        self.rs = rs
        self.clock = 0.0
        self._heap: list = []
        self._seq = 0
        self.pickers: list[PickerState] = []
        self.amrs: list[AmrState] = []
        self.pickrun_queue: deque[Pickrun] = deque()
        self.placement = {}
        self.items_remaining = 0
        self.total_mass_picked = 0.0
        self.pending: list[int] = []  # picker ids awaiting allocation, FIFO
        self.current_request: int | None = None
        # a policy may stage an explicit walking route for the allocation it
        # is about to make; consumed (and cleared) by the next allocation
        self.planned_route: list[int] | None = None
        self.completion_time: float | None = None
        # set when a picker sat through events with no valid target and was
        # allocated later anyway; such episodes are not earliest-start
        self.allocation_delayed = False
        self._delayed_pickers: set[int] = set()
        self.event_log: list[tuple] = []
        # realized decisions, for cross-checks against the schedule evaluator:
        # per picker, ordered (amr_id, stop_index, finish_time)
        self.realized: list[list[tuple[int, int, float]]] = []

    # -- event plumbing ----------------------------------------------------

    def _schedule(self, delay: float, kind: str, payload: tuple):
        heapq.heappush(self._heap, (self.clock + delay, self._seq, kind, payload))
        self._seq += 1

    def _log(self, entity: str, event: str, node: int):
        if self.config.log_events:
            self.event_log.append((self.clock, entity, event, node))

    @property
    def done(self) -> bool:
        return self.items_remaining == 0

    # -- picker process ----------------------------------------------------

    def _allocate_picker(self, picker: PickerState, dest: int):
        route = self.planned_route
        self.planned_route = None
        if route is not None:
            if not route or route[0] != picker.node or route[-1] != dest:
                route = None  # stale plan from an earlier decision
            else:
                for u, v in zip(route, route[1:]):
                    self._edge_len(MODE_PICKER, u, v)  # raises on a non-edge
        picker.destination = dest
        picker.status = MOVING
        picker.speed = sample_picker_speed(
            self.rs, self.config.picker_speed_mu, self.config.picker_speed_sigma)
        if route is None:
            route = ([picker.node] if dest == picker.node
                     else shortest_path(self.layout, MODE_PICKER, picker.node, dest))
        picker.path = route
        picker.hop = 0
        if len(route) == 1:
            self._picker_arrived(picker)
        else:
            self._schedule_picker_hop(picker)

    def _schedule_picker_hop(self, picker: PickerState):
        u, v = picker.path[picker.hop], picker.path[picker.hop + 1]
        length = self._edge_len(MODE_PICKER, u, v)
        self._schedule(length / picker.speed, "picker_hop", (picker.id,))

    def _on_picker_hop(self, picker: PickerState):
        picker.hop += 1
        picker.node = picker.path[picker.hop]
        self._log("picker-%d" % picker.id, "move", picker.node)
        if picker.hop + 1 < len(picker.path):
            self._schedule_picker_hop(picker)
        else:
            self._picker_arrived(picker)

    def _picker_arrived(self, picker: PickerState):
        self._log("picker-%d" % picker.id, "arrive", picker.node)
        amr = self._waiting_amr_at(picker.node)
        if amr is not None:
            self._start_pick(picker, amr)
            return
        if self._node_in_amr_plans(picker.node):
            picker.status = WAITING_FOR_AMR
        else:
            # nothing will ever stop here; ask for a fresh destination
            self.allocation_delayed = True
            self._request_allocation(picker)

    def _waiting_amr_at(self, node: int) -> AmrState | None:
        best = None
        for amr in self.amrs:
            stop = amr.current_stop()
            if (amr.status == AMR_WAITING and amr.node == node
                    and stop is not None and stop.node == node):
                if best is None or (amr.wait_since, amr.id) < (best.wait_since, best.id):
                    best = amr
        return best

    def _node_in_amr_plans(self, node: int) -> bool:
        for amr in self.amrs:
            for k in (0, 1):
                stop = amr.stop_ahead(k)
                if stop is not None and stop.node == node:
                    return True
        return False

    def _request_allocation(self, picker: PickerState):
        picker.status = IDLE
        picker.destination = None
        self.pending.append(picker.id)
        self._log("picker-%d" % picker.id, "request", picker.node)

    def _start_pick(self, picker: PickerState, amr: AmrState):
        stop = amr.current_stop()
        picker.status = PICKING
        amr.status = AMR_LOADING
        if self.config.fixed_pick_time is not None:
            duration = self.config.fixed_pick_time
        else:
            product = self.placement[stop.node]
            t_exp = expected_pick_time(product, stop.n_items,
                                       self.config.product_model.pick_time)
            duration = sample_pick_time(self.rs, t_exp)
        if self.config.disruptions and self.rs.rng.random() < 1.0 / 50.0:
            duration += sample_disruption_duration(self.rs)
        self._log("picker-%d" % picker.id, "pick_start", stop.node)
        self._schedule(duration, "pick_done", (picker.id, amr.id))

    def _on_pick_done(self, picker: PickerState, amr: AmrState):
        stop = amr.current_stop()
        mass = stop.mass
        if mass is None:
            mass = stop.n_items * self.placement[stop.node].weight
        picker.workload += mass
        picker.picks_done += 1
        self.total_mass_picked += mass
        self.items_remaining -= stop.n_items
        self.realized[picker.id].append((amr.id, amr.cursor, self.clock))
        self._log("picker-%d" % picker.id, "pick_done", stop.node)
        amr.cursor += 1
        if self.items_remaining == 0:
            self.completion_time = self.clock
        # AMR continues its pickrun, or heads home
        nxt = amr.current_stop()
        if nxt is not None:
            self._start_amr_trip(amr, nxt.node, AMR_MOVING)
        else:
            amr.pickrun = None
            self._start_amr_trip(amr, self.layout.base_node, AMR_TO_BASE)
        # picker serves any other AMR already waiting here before re-requesting
        other = self._waiting_amr_at(picker.node)
        if other is not None:
            self._start_pick(picker, other)
        else:
            self._request_allocation(picker)

    # -- AMR process -------------------------------------------------------

    def _start_amr_trip(self, amr: AmrState, dest: int, status: str):
        amr.status = status
        amr.speed = sample_amr_speed(
            self.rs, self.config.amr_speed_mu, self.config.amr_speed_sigma)
        if dest == amr.node:
            amr.path = [amr.node]
            amr.hop = 0
            self._amr_arrived(amr)
            return
        amr.path = shortest_path(self.layout, MODE_AMR, amr.node, dest)
        amr.hop = 0
        self._schedule_amr_hop(amr)

    def _schedule_amr_hop(self, amr: AmrState):
        u, v = amr.path[amr.hop], amr.path[amr.hop + 1]
        delay = self._edge_len(MODE_AMR, u, v) / amr.speed
        if self.config.overtakes and self.layout.is_pick[v]:
            # each stationary AMR on an in-aisle node costs one slow
            # overtaking maneuver; cross-aisles are congestion-free
            for other in self.amrs:
                if (other.id != amr.id and other.node == v
                        and other.status in (AMR_WAITING, AMR_LOADING)):
                    delay += sample_overtake_delay(self.rs)
        self._schedule(delay, "amr_hop", (amr.id,))

    def _on_amr_hop(self, amr: AmrState):
        amr.hop += 1
        amr.node = amr.path[amr.hop]
        self._log("amr-%d" % amr.id, "move", amr.node)
        if amr.hop + 1 < len(amr.path):
            self._schedule_amr_hop(amr)
        else:
            self._amr_arrived(amr)

    def _amr_arrived(self, amr: AmrState):
        if amr.status == AMR_TO_BASE:
            self._log("amr-%d" % amr.id, "at_base", amr.node)
            if self.pickrun_queue:
                run = self.pickrun_queue.popleft()
                run.amr = amr.id
                amr.pickrun = run
                amr.cursor = 0
                self._start_amr_trip(amr, run.stops[0].node, AMR_MOVING)
            else:
                amr.status = AMR_IDLE
            return
        amr.status = AMR_WAITING
        amr.wait_since = self.clock
        self._log("amr-%d" % amr.id, "wait", amr.node)
        for picker in self.pickers:
            if (picker.status == WAITING_FOR_AMR and picker.node == amr.node
                    and picker.destination == amr.node):
                self._start_pick(picker, amr)
                return

    # -- helpers -----------------------------------------------------------

    def _edge_len(self, mode: str, u: int, v: int) -> float:
        for w, ln in self.layout.neighbors(mode, u):
            if w == v:
                return ln
        raise RuntimeError(f"no {mode} edge {u}->{v}")  # pragma: no cover

    def _execute(self, kind: str, payload: tuple):
        if kind == "picker_hop":
            self._on_picker_hop(self.pickers[payload[0]])
        elif kind == "amr_hop":
            self._on_amr_hop(self.amrs[payload[0]])
        elif kind == "pick_done":
            self._on_pick_done(self.pickers[payload[0]], self.amrs[payload[1]])
        else:  # pragma: no cover
            raise RuntimeError(f"unknown event kind {kind}")


# --- pickrun generation ----------------------------------------------------

def s_shape_sort_key(layout: WarehouseLayout, node: int) -> tuple:
    a = int(layout.aisle_of[node])
    d = int(layout.depth_of[node])
    if layout.amr_direction[a] == "up":
        within = d
    else:
        within = layout.depth - 1 - d
    return (a, within, int(layout.side_of[node]))


def generate_pickruns(rs: RandomStream, layout: WarehouseLayout, total_picks: int,
                      model: ProductModel = DEFAULT_PRODUCT_MODEL,
                      len_lo: int = 15, len_hi: int = 25) -> list[Pickrun]:
    """Sample pickruns until the item budget is exactly met.

    Each pickrun visits a random set of locations sorted in the traversal
    (S-shape) order the AMRs drive, with per-location item counts drawn
    from the configured frequency distribution.
    """
    if total_picks < 1:
        raise ValueError("total_picks must be at least 1")
    pick_nodes = [v for v in range(layout.n_nodes) if layout.is_pick[v]]
    runs: list[Pickrun] = []
    budget = total_picks
    while budget > 0:
        length = rs.uniform_int(len_lo, min(len_hi, max(len_lo, len(pick_nodes))))
        length = min(length, len(pick_nodes))
        nodes = rs.rng.choice(len(pick_nodes), size=length, replace=False)
        nodes = sorted((pick_nodes[i] for i in nodes),
                       key=lambda v: s_shape_sort_key(layout, v))
        stops = []
        for v in nodes:
            n = model.sample_item_count(rs)
            if n >= budget:
                stops.append(Stop(v, budget))
                budget = 0
                break
            stops.append(Stop(v, n))
            budget -= n
        runs.append(Pickrun(stops=stops))
    return runs


# --- episode construction --------------------------------------------------

def init_episode(config: SimConfig, rs: RandomStream,
                 layout: WarehouseLayout | None = None) -> SimState:
    if config.n_pickers < 1 or config.n_amrs < 1:
        raise ValueError("need at least one picker and one AMR")
    if layout is None:
        layout = build_layout(config.n_aisles, config.depth)
    state = SimState(config, layout, rs)

    if config.pickruns is not None:
        runs = [Pickrun(stops=list(r.stops)) for r in config.pickruns]
    else:
        state.placement = generate_product_placement(rs, layout, config.product_model)
        runs = generate_pickruns(rs, layout, config.total_picks,
                                 config.product_model,
                                 config.pickrun_len_lo, config.pickrun_len_hi)

    # FIFO pickrun-to-AMR assignment; the first runs go out immediately
    state.amrs = [AmrState(id=i, node=layout.base_node) for i in range(config.n_amrs)]
    if config.amr_start_nodes is not None:
        for amr, node in zip(state.amrs, config.amr_start_nodes):
            amr.node = node
    for i, amr in enumerate(state.amrs):
        if i < len(runs):
            run = runs[i]
            run.amr = amr.id
            if config.diverse_start and len(run.stops) > 1:
                cut = rs.uniform_int(0, len(run.stops) - 1)
                if cut > 0:
                    amr.node = run.stops[cut - 1].node
                    run.stops = run.stops[cut:]
            amr.pickrun = run
            amr.cursor = 0
    state.pickrun_queue = deque(runs[config.n_amrs:])
    state.items_remaining = sum(
        r.total_items() for r in
        ([a.pickrun for a in state.amrs if a.pickrun is not None]
         + list(state.pickrun_queue)))

    state.pickers = [PickerState(id=i, node=layout.base_node)
                     for i in range(config.n_pickers)]
    state.realized = [[] for _ in range(config.n_pickers)]
    if config.picker_start_nodes is not None:
        for p, node in zip(state.pickers, config.picker_start_nodes):
            p.node = node

    # launch the AMRs
    for amr in state.amrs:
        if amr.pickrun is not None:
            state._start_amr_trip(amr, amr.pickrun.stops[0].node, AMR_MOVING)
        else:
            amr.status = AMR_IDLE

    # spread the pickers: walk each to a random unclaimed AMR target
    if config.pickers_request_at_start:
        for p in state.pickers:
            state._request_allocation(p)
    else:
        pick_nodes = [v for v in range(layout.n_nodes) if layout.is_pick[v]]
        for p in state.pickers:
            mask = valid_actions(state, p.id)
            if mask.any():
                choices = np.flatnonzero(mask)
                dest = int(choices[rs.rng.integers(len(choices))])
            else:
                dest = pick_nodes[int(rs.rng.integers(len(pick_nodes)))]
            state._allocate_picker(p, dest)
    return state


# --- decision-point loop ---------------------------------------------------

def valid_actions(state: SimState, requesting_picker: int) -> np.ndarray:
    """Boolean mask over pick nodes: unclaimed current/next AMR stops.

    When the event queue is empty the whole system is stationary (every
    AMR is waiting to be served), so the mask narrows to the stops of
    waiting AMRs; anything else could never produce a pick and would
    stall the system forever.
    """
    mask = np.zeros(state.layout.n_pick_nodes, dtype=bool)
    quiescent = not state._heap
    for amr in state.amrs:
        if amr.pickrun is None:
            continue
        if amr.status in (AMR_MOVING, AMR_WAITING):
            stop = amr.current_stop()
            if stop is not None:
                mask[stop.node] = True
        if quiescent:
            continue
        # while loading, the current stop is being served; only the next
        # stop is open
        nxt = amr.stop_ahead(1)
        if nxt is not None:
            mask[nxt.node] = True
    for p in state.pickers:
        if p.id == requesting_picker:
            continue
        if p.status in (MOVING, WAITING_FOR_AMR) and p.destination is not None:
            mask[p.destination] = False
        elif p.status == PICKING:
            mask[p.node] = False
    return mask


def advance_to_next_request(state: SimState) -> DecisionPoint | EpisodeDone:
    while True:
        if state.done:
            return EpisodeDone(time=state.completion_time)
        for pid in state.pending:
            if valid_actions(state, pid).any():
                state.current_request = pid
                return DecisionPoint(picker=pid, time=state.clock)
        if not state._heap:
            # quiescent: nothing moving, so every non-idle picker is stuck
            # waiting at a node no AMR can reach before being served
            # elsewhere.  Re-poll them all (the narrowed quiescent mask
            # guarantees the next allocation produces a pick); fault only
            # if that cannot help.
            stuck = [p for p in state.pickers if p.status == WAITING_FOR_AMR]
            if stuck:
                state.allocation_delayed = True  # abandoned claims
                for p in stuck:
                    state._request_allocation(p)
                continue
            raise SimulationIntegrityError(
                f"event queue empty with {state.items_remaining} items unpicked")
        state._delayed_pickers.update(state.pending)
        t, _, kind, payload = heapq.heappop(state._heap)
        state.clock = t
        state._execute(kind, payload)


def apply_allocation(state: SimState, picker: int, target: int) -> None:
    if picker != state.current_request:
        raise InvalidActionError(f"picker {picker} is not the requesting picker")
    mask = valid_actions(state, picker)
    if target < 0 or target >= len(mask) or not mask[target]:
        raise InvalidActionError(f"target node {target} not in the valid action set")
    state.pending.remove(picker)
    state.current_request = None
    if picker in state._delayed_pickers:
        state.allocation_delayed = True
        state._delayed_pickers.discard(picker)
    state._allocate_picker(state.pickers[picker], target)


def episode_metrics(state: SimState) -> tuple[float, float, list[float]]:
    if not state.done:
        raise RuntimeError("episode not finished")
    workloads = [p.workload for p in state.pickers]
    sd = float(np.std(workloads))  # population standard deviation
    return state.completion_time, sd, workloads


def run_episode(state: SimState, policy) -> tuple[float, float, list[float]]:
    """Drive a policy until the episode ends; returns episode metrics.

    ``policy(state, picker_id, mask) -> node`` is called at every decision
    point.
    """
    while True:
        outcome = advance_to_next_request(state)
        if isinstance(outcome, EpisodeDone):
            return episode_metrics(state)
        mask = valid_actions(state, outcome.picker)
        target = policy(state, outcome.picker, mask)
        apply_allocation(state, outcome.picker, target)
