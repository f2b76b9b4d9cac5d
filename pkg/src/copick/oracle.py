"""Exact solver and schedule evaluator for tiny deterministic instances.

With fixed speeds and load times the picking problem becomes a scheduling
problem: each AMR visits its items in a fixed sequence, each picker serves
items in some order, and every pick starts as soon as both parties have
arrived.  ``evaluate_schedule`` propagates those earliest start times
through the precedence graph; ``solve_exact`` searches all assignments and
per-picker orders with branch-and-bound pruning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .layout import MODE_AMR, MODE_PICKER, WarehouseLayout, build_layout
from .sampling import RandomStream
from .simulation import (Pickrun, SimConfig, SimState, Stop, init_episode,
                         run_episode, s_shape_sort_key)

MAX_ITEMS = 9
MAX_PICKERS = 3

DEFAULT_LOAD_TIME = 7.5


@dataclass(frozen=True)
class OracleItem:
    id: int
    node: int
    mass: float           # kg
    load_time: float = DEFAULT_LOAD_TIME


@dataclass
class DeterministicInstance:
    n_aisles: int
    depth: int
    items: list[OracleItem]
    amr_sequences: list[list[int]]   # item ids, visit order per AMR
    picker_starts: list[int]
    picker_speed: float = 1.25
    amr_speed: float = 1.5

    def __post_init__(self):
        ids = [i.id for i in self.items]
        if sorted(ids) != list(range(len(self.items))):
            raise ValueError("item ids must be 0..n-1")
        seen: set[int] = set()
        for seq in self.amr_sequences:
            for i in seq:
                if i in seen:
                    raise ValueError(f"item {i} appears on more than one AMR")
                seen.add(i)
        if seen != set(ids):
            raise ValueError("every item must appear on exactly one AMR")

    @cached_property
    def layout(self) -> WarehouseLayout:
        return build_layout(self.n_aisles, self.depth)

    @cached_property
    def _travel(self) -> tuple[np.ndarray, np.ndarray]:
        lay = self.layout
        return (lay.distances(MODE_PICKER).dist / self.picker_speed,
                lay.distances(MODE_AMR).dist / self.amr_speed)

    def amr_of(self, item: int) -> int:
        for r, seq in enumerate(self.amr_sequences):
            if item in seq:
                return r
        raise KeyError(item)

    def to_json(self) -> str:
        return json.dumps({
            "n_aisles": self.n_aisles,
            "depth": self.depth,
            "picker_speed": self.picker_speed,
            "amr_speed": self.amr_speed,
            "items": [{"id": i.id, "node": i.node, "mass": i.mass,
                       "load_time": i.load_time} for i in self.items],
            "amr_sequences": self.amr_sequences,
            "picker_starts": self.picker_starts,
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DeterministicInstance":
        doc = json.loads(text)
        return cls(
            n_aisles=doc["n_aisles"],
            depth=doc["depth"],
            items=[OracleItem(**i) for i in doc["items"]],
            amr_sequences=[list(s) for s in doc["amr_sequences"]],
            picker_starts=list(doc["picker_starts"]),
            picker_speed=doc.get("picker_speed", 1.25),
            amr_speed=doc.get("amr_speed", 1.5),
        )


@dataclass
class Schedule:
    assignment: list[int]            # item -> picker
    orders: list[list[int]]          # per picker, item ids in service order
    start: list[float] = field(default_factory=list)
    finish: list[float] = field(default_factory=list)
    completion_time: float = float("inf")
    workloads: list[float] = field(default_factory=list)
    feasible: bool = True


def _propagate(instance: DeterministicInstance, assignment: list[int] | None,
               orders: list[list[int]],
               free_items: set[int] | None = None) -> Schedule | None:
    """Earliest start times over the picker/AMR precedence graph.

    ``free_items`` are treated as picked instantly on AMR arrival (used for
    the optimistic completion bound during search).  Returns None on a
    precedence cycle.
    """
    n = len(instance.items)
    tp, ta = instance._travel
    base = instance.layout.base_node
    free = free_items or set()

    picker_pred: dict[int, int] = {}
    picker_first: dict[int, int] = {}  # item -> picker, for first items
    for k, order in enumerate(orders):
        for j, i in enumerate(order):
            if j == 0:
                picker_first[i] = k
            else:
                picker_pred[i] = order[j - 1]
    amr_pred: dict[int, int] = {}
    amr_first: set[int] = set()
    for seq in instance.amr_sequences:
        for j, i in enumerate(seq):
            if j == 0:
                amr_first.add(i)
            else:
                amr_pred[i] = seq[j - 1]

    indeg = [0] * n
    for i in range(n):
        if i in picker_pred:
            indeg[i] += 1
        if i in amr_pred:
            indeg[i] += 1
    succ: dict[int, list[int]] = {i: [] for i in range(n)}
    for i, p in picker_pred.items():
        succ[p].append(i)
    for i, p in amr_pred.items():
        succ[p].append(i)

    node = {i.id: i.node for i in instance.items}
    finish = [0.0] * n
    start = [0.0] * n
    ready = [i for i in range(n) if indeg[i] == 0]
    done = 0
    while ready:
        i = ready.pop()
        it = instance.items[i]
        if i in amr_pred:
            p = amr_pred[i]
            amr_ready = finish[p] + ta[node[p], it.node]
        else:
            amr_ready = ta[base, it.node]
        if i in free:
            picker_ready = 0.0
        elif i in picker_pred:
            p = picker_pred[i]
            picker_ready = finish[p] + tp[node[p], it.node] / 1.0
        else:
            k = picker_first[i]
            picker_ready = tp[instance.picker_starts[k], it.node]
        start[i] = max(picker_ready, amr_ready)
        finish[i] = start[i] + it.load_time
        done += 1
        for s in succ[i]:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
    if done < n:
        return None  # cycle: picker order contradicts AMR visit order

    workloads = [0.0] * len(instance.picker_starts)
    if assignment is not None:
        for i, k in enumerate(assignment):
            workloads[k] += instance.items[i].mass
    return Schedule(
        assignment=list(assignment) if assignment is not None else [],
        orders=[list(o) for o in orders],
        start=start,
        finish=finish,
        completion_time=max(finish) if n else 0.0,
        workloads=workloads,
    )


def evaluate_schedule(instance: DeterministicInstance, assignment: list[int],
                      orders: list[list[int]]) -> Schedule:
    """Event times, completion time and workloads of one full schedule."""
    n = len(instance.items)
    if len(assignment) != n:
        raise ValueError("assignment must cover all items")
    for k, order in enumerate(orders):
        for i in order:
            if assignment[i] != k:
                raise ValueError(f"item {i} ordered under picker {k} "
                                 f"but assigned to {assignment[i]}")
    if sorted(i for o in orders for i in o) != list(range(n)):
        raise ValueError("orders must be a partition of the items")
    sched = _propagate(instance, assignment, orders)
    if sched is None:
        return Schedule(assignment=list(assignment),
                        orders=[list(o) for o in orders],
                        completion_time=float("inf"), feasible=False)
    return sched


def _objective_value(objective, sched: Schedule) -> float:
    sd = float(np.std(sched.workloads))
    if objective == "efficiency":
        return sched.completion_time
    if objective == "fairness":
        return sd
    we, wf = objective  # weighted (w_efficiency, w_fairness)
    return we * sched.completion_time + wf * sd


def solve_exact(instance: DeterministicInstance, objective="efficiency",
                prune: bool = True) -> tuple[Schedule, int]:
    """Optimal schedule by exhaustive search; also returns the leaf count.

    Pickers' ordered item lists are built one picker at a time; a branch
    is cut when an optimistic bound (remaining items picked the instant
    their AMR arrives, workload spread zero) cannot beat the incumbent.
    """
    n = len(instance.items)
    n_pickers = len(instance.picker_starts)
    if n > MAX_ITEMS or n_pickers > MAX_PICKERS:
        raise ValueError(
            f"instance too large for exact search: {n} items, {n_pickers} pickers "
            f"(bounds {MAX_ITEMS}, {MAX_PICKERS})")

    best: list = [None, float("inf")]
    explored = [0]
    all_items = set(range(n))

    def weight_eff(obj) -> float:
        if obj == "efficiency":
            return 1.0
        if obj == "fairness":
            return 0.0
        return obj[0]

    w_eff = weight_eff(objective)

    def bound(orders: list[list[int]]) -> float:
        if w_eff == 0.0:
            return 0.0
        used = {i for o in orders for i in o}
        relaxed = _propagate(instance, None, orders, free_items=all_items - used)
        if relaxed is None:
            return float("inf")
        return w_eff * relaxed.completion_time

    def recurse(k: int, remaining: list[int], orders: list[list[int]]):
        if prune and bound(orders) >= best[1]:
            return
        if k == n_pickers - 1:
            # last picker takes everything left; enumerate its orderings
            for perm in _permutations(remaining):
                explored[0] += 1
                sched = _propagate(
                    instance, _assignment_of(orders[:-1] + [perm], n),
                    orders[:-1] + [perm])
                if sched is None:
                    continue
                val = _objective_value(objective, sched)
                if val < best[1] - 1e-12:
                    best[0], best[1] = sched, val
            return
        for subset_order in _ordered_subsets(remaining):
            orders[k] = subset_order
            rest = [i for i in remaining if i not in subset_order]
            recurse(k + 1, rest, orders)
        orders[k] = []

    recurse(0, list(range(n)), [[] for _ in range(n_pickers)])
    if best[0] is None:  # pragma: no cover - some linear order is always feasible
        raise RuntimeError("no feasible schedule found")
    return best[0], explored[0]


def _assignment_of(orders: list[list[int]], n: int) -> list[int]:
    assignment = [0] * n
    for k, order in enumerate(orders):
        for i in order:
            assignment[i] = k
    return assignment


def _permutations(items: list[int]):
    import itertools

    return itertools.permutations(items) if items else [()]


def _ordered_subsets(items: list[int]):
    """All ordered subsets (including empty) of the given items."""
    import itertools

    for r in range(len(items) + 1):
        for combo in itertools.combinations(items, r):
            yield from (list(p) for p in itertools.permutations(combo))


# --- bridging to the event simulator ---------------------------------------

def make_sim_config(instance: DeterministicInstance) -> SimConfig:
    etas = {i.load_time for i in instance.items}
    if len(etas) > 1:
        raise ValueError("the simulator supports one global load time")
    node = {i.id: i.node for i in instance.items}
    mass = {i.id: i.mass for i in instance.items}
    runs = [Pickrun(stops=[Stop(node[i], 1, mass[i]) for i in seq])
            for seq in instance.amr_sequences if seq]
    cfg = SimConfig(
        n_aisles=instance.n_aisles,
        depth=instance.depth,
        n_pickers=len(instance.picker_starts),
        n_amrs=len(runs),
        total_picks=len(instance.items),
        picker_speed_mu=instance.picker_speed,
        amr_speed_mu=instance.amr_speed,
        pickruns=runs,
        picker_start_nodes=list(instance.picker_starts),
        pickers_request_at_start=True,
    ).deterministic()
    cfg.fixed_pick_time = etas.pop()
    return cfg


def simulate_deterministic(instance: DeterministicInstance, policy,
                           seed: int = 0) -> tuple[float, list[float], SimState]:
    """Run the event simulator with all randomness disabled."""
    state = init_episode(make_sim_config(instance), RandomStream(seed))
    completion, _, workloads = run_episode(state, policy)
    return completion, workloads, state


def realized_schedule(instance: DeterministicInstance,
                      state: SimState) -> tuple[list[int], list[list[int]]]:
    """Extract the (assignment, orders) a finished sim episode realized."""
    seqs = [seq for seq in instance.amr_sequences if seq]
    n = len(instance.items)
    assignment = [-1] * n
    orders: list[list[int]] = []
    for k, events in enumerate(state.realized):
        order = []
        for amr_id, cursor, _t in sorted(events, key=lambda e: e[2]):
            item = seqs[amr_id][cursor]
            assignment[item] = k
            order.append(item)
        orders.append(order)
    if -1 in assignment:  # pragma: no cover
        raise RuntimeError("simulation finished without picking every item")
    return assignment, orders


def random_instance(rs: RandomStream, n_aisles: int = 2, depth: int = 3,
                    n_items: int = 5, n_amrs: int = 2,
                    n_pickers: int = 2) -> DeterministicInstance:
    """Small random instance for comparison suites."""
    lay = build_layout(n_aisles, depth)
    pick_nodes = [v for v in range(lay.n_nodes) if lay.is_pick[v]]
    items = [OracleItem(id=i,
                        node=int(rs.choice(pick_nodes)),
                        mass=round(float(rs.rng.uniform(0.5, 12.0)), 2))
             for i in range(n_items)]
    seqs: list[list[int]] = [[] for _ in range(n_amrs)]
    for i in range(n_items):
        seqs[i % n_amrs].append(i)
    # stops follow the S-shape routing order, like real pickruns
    for seq in seqs:
        seq.sort(key=lambda i: s_shape_sort_key(lay, items[i].node))
    starts = [int(rs.choice(pick_nodes)) for _ in range(n_pickers)]
    return DeterministicInstance(n_aisles=n_aisles, depth=depth, items=items,
                                 amr_sequences=seqs, picker_starts=starts)
