"""Parallel-aisle warehouse graph with dual travel modes.

The warehouse is a block of vertical aisles with storage racks on both
sides.  Each rack slot is a pick node; the two cross-aisles at the top and
bottom are modeled with travel-only junction nodes.  Pickers move on an
undirected graph, AMRs on a directed one whose in-aisle edges alternate
direction (aisle 0 runs bottom-to-top).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

# Edge lengths in meters.
DEPTH_STEP = 1.4
SIDE_STEP = 1.0
AISLE_STEP = 6.0

MODE_PICKER = "picker"
MODE_AMR = "amr"

UP = "up"
DOWN = "down"


@dataclass
class DistanceMatrix:
    """All-pairs shortest path lengths for one travel mode."""

    mode: str
    dist: np.ndarray  # (n_nodes, n_nodes), meters

    def __getitem__(self, key):
        return self.dist[key]


@dataclass
class WarehouseLayout:
    n_aisles: int
    depth: int
    n_pick_nodes: int
    n_nodes: int
    aisle_of: np.ndarray       # aisle index per node
    side_of: np.ndarray        # 0 = left, 1 = right
    depth_of: np.ndarray       # position within aisle; -1 for junctions
    is_pick: np.ndarray        # bool per node
    coords: np.ndarray         # (n_nodes, 2) meters, for debugging/plots
    base_node: int             # bottom-left junction, AMR start
    amr_direction: list[str]   # per aisle, "up" or "down"
    # edges[mode] is a list of (u, v, length) directed arcs
    edges: dict[str, list[tuple[int, int, float]]]
    _dist_cache: dict = field(default_factory=dict, repr=False)

    def pick_node(self, aisle: int, d: int, side: int) -> int:
        return (aisle * self.depth + d) * 2 + side

    def junction(self, aisle: int, end: int, side: int) -> int:
        # end 0 = bottom cross-aisle, 1 = top
        return self.n_pick_nodes + (end * self.n_aisles + aisle) * 2 + side

    def entry_end(self, aisle: int) -> int:
        """Cross-aisle end through which AMRs enter the aisle."""
        return 0 if self.amr_direction[aisle] == UP else 1

    def neighbors(self, mode: str, node: int) -> list[tuple[int, float]]:
        return self._adj(mode)[node]

    def _adj(self, mode: str):
        key = ("adj", mode)
        if key not in self._dist_cache:
            adj = [[] for _ in range(self.n_nodes)]
            for u, v, ln in self.edges[mode]:
                adj[u].append((v, ln))
            for lst in adj:
                lst.sort()
            self._dist_cache[key] = adj
        return self._dist_cache[key]

    def distances(self, mode: str) -> DistanceMatrix:
        if mode not in self._dist_cache:
            self._dist_cache[mode] = all_pairs_distance(self, mode)
        return self._dist_cache[mode]

    def to_json(self) -> str:
        doc = {
            "n_aisles": self.n_aisles,
            "depth": self.depth,
            "edges": [
                {"u": u, "v": v, "len": ln, "mode": mode}
                for mode in (MODE_PICKER, MODE_AMR)
                for u, v, ln in self.edges[mode]
            ],
        }
        return json.dumps(doc, indent=1)


def build_layout(n_aisles: int, depth: int) -> WarehouseLayout:
    """Build the warehouse graph for ``n_aisles`` aisles of the given depth.

    Pick nodes come first in the id space (ordered by aisle, depth, side),
    followed by the cross-aisle junction nodes.
    """
    if n_aisles < 1 or depth < 1:
        raise ValueError(f"layout dimensions must be positive, got {n_aisles}x{depth}")

    n_pick = n_aisles * depth * 2
    n_nodes = n_pick + n_aisles * 2 * 2  # two junctions (sides) per aisle end
    aisle_of = np.empty(n_nodes, dtype=np.int64)
    side_of = np.empty(n_nodes, dtype=np.int64)
    depth_of = np.full(n_nodes, -1, dtype=np.int64)
    is_pick = np.zeros(n_nodes, dtype=bool)
    coords = np.zeros((n_nodes, 2))
    amr_direction = [UP if a % 2 == 0 else DOWN for a in range(n_aisles)]

    lay = WarehouseLayout(
        n_aisles=n_aisles,
        depth=depth,
        n_pick_nodes=n_pick,
        n_nodes=n_nodes,
        aisle_of=aisle_of,
        side_of=side_of,
        depth_of=depth_of,
        is_pick=is_pick,
        coords=coords,
        base_node=0,  # fixed up below
        amr_direction=amr_direction,
        edges={MODE_PICKER: [], MODE_AMR: []},
    )

    for a in range(n_aisles):
        for d in range(depth):
            for s in (0, 1):
                v = lay.pick_node(a, d, s)
                aisle_of[v] = a
                side_of[v] = s
                depth_of[v] = d
                is_pick[v] = True
                coords[v] = (a * AISLE_STEP + s * SIDE_STEP, (d + 1) * DEPTH_STEP)
        for end in (0, 1):
            for s in (0, 1):
                v = lay.junction(a, end, s)
                aisle_of[v] = a
                side_of[v] = s
                coords[v] = (a * AISLE_STEP + s * SIDE_STEP,
                             0.0 if end == 0 else (depth + 1) * DEPTH_STEP)

    lay.base_node = lay.junction(0, 0, 0)

    pe = lay.edges[MODE_PICKER]
    ae = lay.edges[MODE_AMR]

    def both(u, v, ln):
        pe.append((u, v, ln))
        pe.append((v, u, ln))
        ae.append((u, v, ln))
        ae.append((v, u, ln))

    def picker_only_bidir(u, v, ln):
        pe.append((u, v, ln))
        pe.append((v, u, ln))

    def amr_arc(u, v, ln):
        ae.append((u, v, ln))
        # Degenerate single-aisle layout has no return loop through a
        # neighboring aisle; keep the AMR graph strongly connected by
        # allowing both directions there.
        if n_aisles == 1:
            ae.append((v, u, ln))

    for a in range(n_aisles):
        up = amr_direction[a] == UP
        for s in (0, 1):
            # in-aisle chain: bottom junction, picks by depth, top junction
            chain = [lay.junction(a, 0, s)]
            chain += [lay.pick_node(a, d, s) for d in range(depth)]
            chain.append(lay.junction(a, 1, s))
            for u, v in zip(chain, chain[1:]):
                picker_only_bidir(u, v, DEPTH_STEP)
                if up:
                    amr_arc(u, v, DEPTH_STEP)
                else:
                    amr_arc(v, u, DEPTH_STEP)
        # rack-side changes, traversable by both modes
        for d in range(depth):
            both(lay.pick_node(a, d, 0), lay.pick_node(a, d, 1), SIDE_STEP)
        for end in (0, 1):
            both(lay.junction(a, end, 0), lay.junction(a, end, 1), SIDE_STEP)

    # cross-aisle links between adjacent aisles
    for a in range(n_aisles - 1):
        for end in (0, 1):
            for s in (0, 1):
                both(lay.junction(a, end, s), lay.junction(a + 1, end, s), AISLE_STEP)

    return lay


def all_pairs_distance(layout: WarehouseLayout, mode: str) -> DistanceMatrix:
    """Exact shortest-path metric over the mode's edge set."""
    if mode not in (MODE_PICKER, MODE_AMR):
        raise ValueError(f"unknown travel mode {mode!r}")
    edges = layout.edges[mode]
    rows = np.array([e[0] for e in edges])
    cols = np.array([e[1] for e in edges])
    lens = np.array([e[2] for e in edges])
    n = layout.n_nodes
    graph = csr_matrix((lens, (rows, cols)), shape=(n, n))
    dist = dijkstra(graph, directed=True, indices=None)
    return DistanceMatrix(mode=mode, dist=dist)


def shortest_path(layout: WarehouseLayout, mode: str, frm: int, to: int) -> list[int]:
    """Node sequence of a shortest path; ties go to the lowest next node id."""
    dm = layout.distances(mode)
    path = [frm]
    u = frm
    while u != to:
        best = None
        target = dm.dist[u, to]
        for v, ln in layout.neighbors(mode, u):
            if abs(ln + dm.dist[v, to] - target) < 1e-9:
                best = v
                break  # neighbors sorted by id, first hit is the lowest
        if best is None:  # pragma: no cover - graphs are connected by construction
            raise RuntimeError(f"no path from {frm} to {to} in mode {mode}")
        path.append(best)
        u = best
    return path
