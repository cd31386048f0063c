"""Exact max-flow / min-cut on directed networks (Dinic's algorithm).

Arcs are stored in reverse-arc pairs (arc i and i^1), so residual updates are
index arithmetic. The solver is compiled with numba; capacities are float64.
Results are deterministic for a fixed arc insertion order: adjacency lists
keep insertion order and the algorithm contains no randomness.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["FlowNetwork", "max_flow_min_cut"]


class FlowNetwork:
    """Directed flow network with paired residual arcs.

    add_arc(u, v, cap) creates the forward arc and its 0-capacity reverse;
    bulk add_arcs takes numpy arrays. Node ids are 0..n_nodes-1.
    """

    def __init__(self, n_nodes: int, source: int, sink: int):
        n_nodes = int(n_nodes)
        if n_nodes < 2:
            raise ValueError("network needs at least source and sink")
        if not (0 <= source < n_nodes and 0 <= sink < n_nodes) or source == sink:
            raise ValueError("source/sink ids invalid")
        self.n_nodes = n_nodes
        self.source = int(source)
        self.sink = int(sink)
        self._from: list[np.ndarray] = []
        self._to: list[np.ndarray] = []
        self._cap: list[np.ndarray] = []

    def add_arc(self, u: int, v: int, cap: float, rev_cap: float = 0.0) -> None:
        self.add_arcs(
            np.array([u], np.int64),
            np.array([v], np.int64),
            np.array([cap], np.float64),
            np.array([rev_cap], np.float64),
        )

    def add_arcs(self, us, vs, caps, rev_caps=None) -> None:
        us = np.asarray(us, np.int64)
        vs = np.asarray(vs, np.int64)
        caps = np.asarray(caps, np.float64)
        if rev_caps is None:
            rev_caps = np.zeros_like(caps)
        else:
            rev_caps = np.asarray(rev_caps, np.float64)
        if not (us.shape == vs.shape == caps.shape == rev_caps.shape):
            raise ValueError("arc arrays must have identical shapes")
        if us.size == 0:
            return
        if us.min() < 0 or vs.min() < 0 or max(us.max(), vs.max()) >= self.n_nodes:
            raise ValueError("arc endpoint out of range")
        if not np.all(np.isfinite(caps)) or not np.all(np.isfinite(rev_caps)):
            raise ValueError("capacities must be finite")
        if caps.min() < 0 or rev_caps.min() < 0:
            raise ValueError("capacities must be >= 0")
        # interleave forward and reverse arcs: pair (2k, 2k+1)
        n = us.size
        ef = np.empty(2 * n, np.int64)
        et = np.empty(2 * n, np.int64)
        ec = np.empty(2 * n, np.float64)
        ef[0::2], ef[1::2] = us, vs
        et[0::2], et[1::2] = vs, us
        ec[0::2], ec[1::2] = caps, rev_caps
        self._from.append(ef)
        self._to.append(et)
        self._cap.append(ec)

    def _assemble(self):
        if self._from:
            edge_from = np.concatenate(self._from)
            edge_to = np.concatenate(self._to)
            cap = np.concatenate(self._cap)
        else:
            edge_from = np.empty(0, np.int64)
            edge_to = np.empty(0, np.int64)
            cap = np.empty(0, np.float64)
        order = np.argsort(edge_from, kind="stable")
        adj_list = order.astype(np.int64)
        adj_start = np.zeros(self.n_nodes + 1, np.int64)
        counts = np.bincount(edge_from, minlength=self.n_nodes)
        adj_start[1:] = np.cumsum(counts)
        return edge_to, cap, adj_list, adj_start


@njit(cache=True)
def _dinic(n, source, sink, edge_to, cap, adj_list, adj_start):  # pragma: no cover
    total = 0.0
    level = np.empty(n, np.int64)
    iter_ptr = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    path_edges = np.empty(n + 1, np.int64)
    path_nodes = np.empty(n + 1, np.int64)
    while True:
        # BFS levels on the residual graph
        for i in range(n):
            level[i] = -1
        level[source] = 0
        queue[0] = source
        qh, qt = 0, 1
        while qh < qt:
            u = queue[qh]
            qh += 1
            for idx in range(adj_start[u], adj_start[u + 1]):
                e = adj_list[idx]
                v = edge_to[e]
                if cap[e] > 0.0 and level[v] < 0:
                    level[v] = level[u] + 1
                    queue[qt] = v
                    qt += 1
        if level[sink] < 0:
            break
        for i in range(n):
            iter_ptr[i] = adj_start[i]
        # blocking flow: repeated DFS with per-node arc pointers
        while True:
            depth = 0
            path_nodes[0] = source
            u = source
            found = False
            while True:
                if u == sink:
                    found = True
                    break
                advanced = False
                while iter_ptr[u] < adj_start[u + 1]:
                    e = adj_list[iter_ptr[u]]
                    v = edge_to[e]
                    if cap[e] > 0.0 and level[v] == level[u] + 1:
                        path_edges[depth] = e
                        depth += 1
                        path_nodes[depth] = v
                        u = v
                        advanced = True
                        break
                    iter_ptr[u] += 1
                if not advanced:
                    level[u] = -1  # dead end this phase
                    if depth == 0:
                        break
                    depth -= 1
                    u = path_nodes[depth]
                    iter_ptr[u] += 1
            if not found:
                break
            bottleneck = np.inf
            for d in range(depth):
                if cap[path_edges[d]] < bottleneck:
                    bottleneck = cap[path_edges[d]]
            for d in range(depth):
                e = path_edges[d]
                cap[e] -= bottleneck
                cap[e ^ 1] += bottleneck
            total += bottleneck
    return total


@njit(cache=True)
def _residual_reachable(n, source, edge_to, cap, adj_list, adj_start):  # pragma: no cover
    seen = np.zeros(n, np.bool_)
    queue = np.empty(n, np.int64)
    seen[source] = True
    queue[0] = source
    qh, qt = 0, 1
    while qh < qt:
        u = queue[qh]
        qh += 1
        for idx in range(adj_start[u], adj_start[u + 1]):
            e = adj_list[idx]
            v = edge_to[e]
            if cap[e] > 0.0 and not seen[v]:
                seen[v] = True
                queue[qt] = v
                qt += 1
    return seen


def max_flow_min_cut(net: FlowNetwork) -> tuple[float, np.ndarray]:
    """Exact maximum flow and the source side of a minimum s-t cut.

    Returns (flow, source_side) where source_side is a boolean array over
    nodes: the residual-reachable set from the source after the flow.
    """
    edge_to, cap, adj_list, adj_start = net._assemble()
    if edge_to.size == 0:
        side = np.zeros(net.n_nodes, bool)
        side[net.source] = True
        return 0.0, side
    flow = _dinic(
        net.n_nodes, net.source, net.sink, edge_to, cap, adj_list, adj_start
    )
    side = _residual_reachable(
        net.n_nodes, net.source, edge_to, cap, adj_list, adj_start
    )
    return float(flow), np.asarray(side, bool)
