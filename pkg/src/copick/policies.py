"""Non-learning allocation policies.

Three benchmarks: send the picker to the nearest valid node, imitate the
manual scan-the-aisle procedure pickers follow in practice, or choose
uniformly at random.  Each returns a node from the valid action mask.
"""

from __future__ import annotations

import numpy as np

from .layout import DOWN, MODE_PICKER, UP, WarehouseLayout, shortest_path
from .sampling import RandomStream
from .simulation import AMR_WAITING, SimState

SCAN_WINDOW = 10  # depth positions scanned ahead or behind


def greedy_policy(state: SimState, picker: int, mask: np.ndarray) -> int:
    """Nearest valid node by walking distance; ties go to the lowest id."""
    cand = np.flatnonzero(mask)
    if len(cand) == 0:
        raise ValueError("empty action mask")
    dp = state.layout.distances(MODE_PICKER)
    d = dp[state.pickers[picker].node, cand]
    return int(cand[np.argmin(d)])  # argmin keeps the first (lowest id) tie


def random_policy(rs: RandomStream, mask: np.ndarray) -> int:
    cand = np.flatnonzero(mask)
    if len(cand) == 0:
        raise ValueError("empty action mask")
    return int(cand[rs.rng.integers(len(cand))])


class VIWalker:
    """Per-picker scan state for the manual-procedure policy.

    The procedure is stateful: a picker keeps walking its committed aisle
    between requests instead of restarting the scan from scratch.
    """

    def __init__(self):
        self.cursor: dict[int, tuple[int, int]] = {}  # picker -> (aisle, depth)
        self.fallbacks = 0


def _start_position(lay: WarehouseLayout, node: int) -> tuple[int, int]:
    aisle = int(lay.aisle_of[node])
    if lay.is_pick[node]:
        return aisle, int(lay.depth_of[node])
    # junction: enter the aisle at the near end
    end = (node - lay.n_pick_nodes) // (2 * lay.n_aisles)
    return aisle, 0 if end == 0 else lay.depth - 1


def _waiting_stops(state: SimState) -> dict[int, list[tuple[int, int]]]:
    """Waiting-AMR stop positions grouped by aisle as (depth, node)."""
    lay = state.layout
    by_aisle: dict[int, list[tuple[int, int]]] = {}
    for amr in state.amrs:
        stop = amr.current_stop()
        if amr.status == AMR_WAITING and stop is not None:
            a = int(lay.aisle_of[stop.node])
            by_aisle.setdefault(a, []).append((int(lay.depth_of[stop.node]), stop.node))
    return by_aisle


def _scan_window(stops: list[tuple[int, int]], d: int, ahead: int) -> int | None:
    """Nearest waiting stop within the window, ahead before behind on ties."""
    by_depth: dict[int, int] = {}
    for sd, node in sorted(stops):
        by_depth.setdefault(sd, node)
    for dist in range(SCAN_WINDOW + 1):
        for sign in (ahead, -ahead):
            node = by_depth.get(d + sign * dist)
            if node is not None:
                return node
            if dist == 0:
                break
    return None


def _walk_to_target(lay: WarehouseLayout, start: tuple[int, int], side: int,
                    origin: int, by_aisle: dict[int, list[tuple[int, int]]],
                    waiting_counts: dict[int, int]):
    """Virtual scan walk; returns (found node or None, waypoints walked).

    Walks the current aisle in the robot travel direction scanning the
    window; at the aisle end commits to the unvisited aisle minimizing
    (aisle distance - waiting AMRs there) and enters it at its robot entry
    end.
    """
    aisle, d = start
    waypoints = [origin]
    visited = set()
    while True:
        ahead = 1 if lay.amr_direction[aisle] == UP else -1
        end = lay.depth - 1 if ahead == 1 else 0
        while True:
            found = _scan_window(by_aisle.get(aisle, []), d, ahead)
            if found is not None:
                return found, waypoints
            if d == end:
                break
            d += ahead
        visited.add(aisle)
        if len(visited) == lay.n_aisles:
            return None, waypoints
        # walk out through the junction at the exhausted end
        waypoints.append(lay.junction(aisle, 1 if ahead == 1 else 0, side))
        costs = [(abs(a - aisle) - waiting_counts.get(a, 0), a)
                 for a in range(lay.n_aisles) if a not in visited]
        aisle = min(costs)[1]
        entry = lay.entry_end(aisle)
        waypoints.append(lay.junction(aisle, entry, side))
        d = 0 if entry == 0 else lay.depth - 1


def vi_policy(state: SimState, picker: int, mask: np.ndarray,
              walker: VIWalker) -> int:
    """Scan-the-aisle procedure used by pickers on the floor.

    Walk the current aisle in its robot travel direction, scanning 10
    positions ahead or behind for a waiting AMR.  At the aisle end, move to
    the aisle minimizing (aisle distance - waiting AMRs there), enter it at
    its robot entry end, and continue.  With no waiting AMR reachable, the
    picker keeps wandering the same way until it crosses a planned stop.
    The walk itself is part of the procedure, so the full route (including
    fruitless aisles) is staged on the state and the picker physically
    walks it.
    """
    lay = state.layout
    p = state.pickers[picker]
    waiting = _waiting_stops(state)
    # only stops the picker may actually take
    claimable = {a: [(sd, v) for sd, v in stops if mask[v]]
                 for a, stops in waiting.items()}
    claimable = {a: stops for a, stops in claimable.items() if stops}
    counts = {a: len(stops) for a, stops in waiting.items()}
    start = walker.cursor.get(picker, _start_position(lay, p.node))
    start = (min(start[0], lay.n_aisles - 1), start[1])
    side = int(lay.side_of[p.node])

    choice, waypoints = _walk_to_target(lay, start, side, p.node,
                                        claimable, counts)
    if choice is None:
        # nobody is waiting: wander on toward the nearest planned stop
        cand = np.flatnonzero(mask)
        by_aisle: dict[int, list[tuple[int, int]]] = {}
        for v in cand:
            by_aisle.setdefault(int(lay.aisle_of[v]), []).append(
                (int(lay.depth_of[v]), int(v)))
        choice, waypoints = _walk_to_target(lay, start, side, p.node,
                                            by_aisle, {})

    state.planned_route = None
    if choice is None:
        walker.fallbacks += 1
        choice = greedy_policy(state, picker, mask)
    else:
        waypoints.append(choice)
        route = [waypoints[0]]
        for a, b in zip(waypoints, waypoints[1:]):
            route += shortest_path(lay, MODE_PICKER, a, b)[1:]
        if len(route) > 1:
            state.planned_route = route
    walker.cursor[picker] = (int(lay.aisle_of[choice]), int(lay.depth_of[choice]))
    return choice


def make_policy(name: str, rs: RandomStream | None = None):
    """Policy callable with the run_episode signature."""
    if name == "greedy":
        return greedy_policy
    if name == "random":
        if rs is None:
            raise ValueError("random policy needs a RandomStream")
        return lambda state, picker, mask: random_policy(rs, mask)
    if name == "vi":
        walker = VIWalker()
        return lambda state, picker, mask: vi_policy(state, picker, mask, walker)
    raise ValueError(f"unknown policy {name!r}")
