"""Vessel centerline skeletons, tree graphs, organ entries, branch groups.

Skeletonization is distance-ordered homotopic thinning in (26, 6) digital
topology: foreground voxels are visited outermost-first (ordered by the
anisotropic Euclidean distance to the background) and deleted only while
deletion preserves local topology (simple points); curve endpoints are kept.
The surviving voxels decompose into maximal 26-connected chains between
voxels of degree != 2. ``build_tree`` turns the chains into a graph, breaks
every residual cycle at its longest edge, and groups edges into branches.
``detect_entries`` marks where the tree first enters a kidney mask along each
root-to-leaf traversal, and ``cluster_branches`` partitions the branches
around those entries at an adjustable bifurcation level.
"""

from __future__ import annotations

import heapq
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy import ndimage

from .volume import LabelVolume, VolumeGeometry

__all__ = [
    "Centerline",
    "TreeNode",
    "TreeEdge",
    "Branch",
    "VesselTree",
    "BranchClustering",
    "skeletonize",
    "build_tree",
    "detect_entries",
    "cluster_branches",
    "tree_to_json",
    "tree_from_json",
]


# ---------------------------------------------------------------------------
# simple-point machinery (3x3x3 neighborhood tables, baked into the jit code)

_OFF27 = np.array(
    [[dz, dy, dx] for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
    dtype=np.int64,
)
_DIFF = np.abs(_OFF27[:, None, :] - _OFF27[None, :, :])
_ADJ26 = (_DIFF.max(axis=2) == 1).astype(np.uint8)
_ADJ6 = (_DIFF.sum(axis=2) == 1).astype(np.uint8)
_MANHATTAN = np.abs(_OFF27).sum(axis=1)
_IN18 = ((_MANHATTAN >= 1) & (_MANHATTAN <= 2)).astype(np.uint8)
_IS_FACE = (_MANHATTAN == 1).astype(np.uint8)
_CENTER = 13


@njit(cache=True)
def _is_simple(fg, z, y, x):  # pragma: no cover - exercised via skeletonize
    """Can (z,y,x) be deleted without changing (26, 6) topology?

    True iff the foreground in the punctured 26-neighborhood is one
    26-component and the background in the 18-neighborhood is one
    6-component touching a face neighbor.
    """
    blk = np.empty(27, np.uint8)
    k = 0
    for dz in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                blk[k] = fg[z + dz, y + dy, x + dx]
                k += 1

    stack = np.empty(27, np.int64)
    seen = np.zeros(27, np.uint8)
    comps = 0
    for s in range(27):
        if s == _CENTER or blk[s] == 0 or seen[s] == 1:
            continue
        comps += 1
        if comps > 1:
            return False
        seen[s] = 1
        stack[0] = s
        top = 1
        while top > 0:
            top -= 1
            u = stack[top]
            for v in range(27):
                if v != _CENTER and blk[v] == 1 and seen[v] == 0 and _ADJ26[u, v] == 1:
                    seen[v] = 1
                    stack[top] = v
                    top += 1
    if comps != 1:
        return False

    seen2 = np.zeros(27, np.uint8)
    comps2 = 0
    for s in range(27):
        if _IS_FACE[s] == 0 or blk[s] == 1 or seen2[s] == 1:
            continue
        comps2 += 1
        if comps2 > 1:
            return False
        seen2[s] = 1
        stack[0] = s
        top = 1
        while top > 0:
            top -= 1
            u = stack[top]
            for v in range(27):
                if _IN18[v] == 1 and blk[v] == 0 and seen2[v] == 0 and _ADJ6[u, v] == 1:
                    seen2[v] = 1
                    stack[top] = v
                    top += 1
    return comps2 == 1


@njit(cache=True)
def _fg_neighbor_count(fg, z, y, x):  # pragma: no cover - exercised via skeletonize
    c = 0
    for dz in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if dz == 0 and dy == 0 and dx == 0:
                    continue
                c += fg[z + dz, y + dy, x + dx]
    return c


def _thin(fg: np.ndarray, spacing_zyx) -> np.ndarray:
    """Sequential homotopic thinning, outermost voxels (smallest EDT) first.

    Deletion order is (distance, linear index), so the result is
    deterministic. Curve endpoints (<= 1 foreground neighbor) survive, which
    keeps the full length of every limb.
    """
    pad = np.pad(fg, 1).astype(np.uint8)
    # ordering distances come from the unpadded mask: the volume border is
    # background only for topology, not a surface the object erodes from
    dist = np.pad(ndimage.distance_transform_edt(fg, sampling=spacing_zyx), 1)
    nzp, nyp, nxp = pad.shape
    plane = nxp * nyp
    pr = pad.ravel()
    dr = dist.ravel()

    flats = np.flatnonzero(pr)
    heap = list(zip(dr[flats].tolist(), flats.tolist()))
    heapq.heapify(heap)
    while heap:
        _, f = heapq.heappop(heap)
        if pr[f] == 0:
            continue
        z = f // plane
        y = (f % plane) // nxp
        x = f % nxp
        if _fg_neighbor_count(pad, z, y, x) <= 1:
            continue
        if not _is_simple(pad, z, y, x):
            continue
        pr[f] = 0
        for dz in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dz == 0 and dy == 0 and dx == 0:
                        continue
                    g = f + dx + nxp * (dy + nyp * dz)
                    if pr[g]:
                        heapq.heappush(heap, (dr[g], g))
    return pad[1:-1, 1:-1, 1:-1].astype(bool)


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True, eq=False)
class Centerline:
    """One 26-connected voxel path; (n, 3) indices in (i, j, k) = (x, y, z)."""

    geometry: VolumeGeometry
    voxels: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.voxels, np.int64))
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
            raise ValueError("centerline needs a non-empty (n, 3) voxel array")
        if arr.min() < 0 or np.any(arr >= np.array(self.geometry.dims)):
            raise ValueError("centerline voxel outside the volume")
        if arr.shape[0] > 1:
            step = np.abs(np.diff(arr, axis=0)).max(axis=1)
            if step.min() < 1 or step.max() > 1:
                raise ValueError("consecutive centerline voxels must be 26-adjacent")
        nx, ny, _ = self.geometry.dims
        flats = arr[:, 0] + nx * (arr[:, 1] + ny * arr[:, 2])
        if np.unique(flats).size != flats.size:
            raise ValueError("centerline repeats a voxel")
        arr.flags.writeable = False
        object.__setattr__(self, "voxels", arr)

    @property
    def length_mm(self) -> float:
        steps = np.diff(self.voxels.astype(np.float64), axis=0)
        return float(np.linalg.norm(steps * np.asarray(self.geometry.spacing), axis=1).sum())


@dataclass(frozen=True)
class TreeNode:
    id: int
    voxel: tuple[int, int, int]
    position_mm: tuple[float, float, float]
    degree: int


@dataclass(frozen=True, eq=False)
class TreeEdge:
    """Voxel path between two nodes; path[0] / path[-1] are the node voxels."""

    id: int
    node_from: int
    node_to: int
    path: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.path, np.int64))
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 2:
            raise ValueError("edge path needs at least its two node voxels")
        arr.flags.writeable = False
        object.__setattr__(self, "path", arr)


@dataclass(frozen=True)
class Branch:
    """Maximal chain of edges between endpoints/bifurcations (or entries)."""

    id: int
    edges: tuple[int, ...]
    node_a: int
    node_b: int


@dataclass(frozen=True, eq=False)
class VesselTree:
    """Connected acyclic vessel graph over one volume geometry.

    Node/edge/branch ids equal their index in the corresponding tuple. The
    entries tuple lists node ids where the centerline first enters the organ.
    """

    geometry: VolumeGeometry
    nodes: tuple[TreeNode, ...]
    edges: tuple[TreeEdge, ...]
    branches: tuple[Branch, ...]
    root: int
    entries: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.nodes)
        if [x.id for x in self.nodes] != list(range(n)):
            raise ValueError("node ids must be 0..n-1 in tuple order")
        if [e.id for e in self.edges] != list(range(len(self.edges))):
            raise ValueError("edge ids must be 0..n-1 in tuple order")
        if [b.id for b in self.branches] != list(range(len(self.branches))):
            raise ValueError("branch ids must be 0..n-1 in tuple order")
        if not 0 <= self.root < n:
            raise ValueError(f"root node {self.root} does not exist")
        for e in self.edges:
            if not (0 <= e.node_from < n and 0 <= e.node_to < n):
                raise ValueError(f"edge {e.id} references a missing node")
            if tuple(e.path[0]) != self.nodes[e.node_from].voxel or tuple(
                e.path[-1]
            ) != self.nodes[e.node_to].voxel:
                raise ValueError(f"edge {e.id} path does not end on its node voxels")
        covered = sorted(eid for b in self.branches for eid in b.edges)
        if covered != list(range(len(self.edges))):
            raise ValueError("branches must cover every edge exactly once")
        bad = [e for e in self.entries if not 0 <= e < n]
        if bad:
            raise ValueError(f"entry nodes {bad} do not exist")


@dataclass(frozen=True)
class BranchClustering:
    """Partition of branch ids into groups at one bifurcation level."""

    level_offset: int
    group_of: dict[int, int]
    n_groups: int

    def groups(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.n_groups)]
        for bid in sorted(self.group_of):
            out[self.group_of[bid]].append(bid)
        return tuple(tuple(g) for g in out)


# ---------------------------------------------------------------------------
# chain decomposition and tree assembly

_OFFSETS26 = tuple(
    (di, dj, dk)
    for dk in (-1, 0, 1)
    for dj in (-1, 0, 1)
    for di in (-1, 0, 1)
    if (di, dj, dk) != (0, 0, 0)
)


def _chain_decompose(skel: np.ndarray, nx: int, ny: int, protected: frozenset):
    """Split skeleton voxels into node voxels and chain edges.

    Nodes are voxels of 26-degree != 2 plus the protected linear indices;
    edges are maximal chains between nodes (a chain closing on its start
    node repeats that voxel at both ends). A pure cycle gets its smallest
    linear index promoted to a node.
    """
    kk, jj, ii = np.nonzero(skel)
    fg = set(zip(ii.tolist(), jj.tolist(), kk.tolist()))

    def flat(v):
        return v[0] + nx * (v[1] + ny * v[2])

    def neighbors(v):
        i, j, k = v
        out = []
        for di, dj, dk in _OFFSETS26:
            w = (i + di, j + dj, k + dk)
            if w in fg:
                out.append(w)
        return out

    order = sorted(fg, key=flat)
    node_voxels = [v for v in order if len(neighbors(v)) != 2 or flat(v) in protected]
    node_set = set(node_voxels)
    visited = set()
    edges = []
    for a in node_voxels:
        for nb in neighbors(a):
            if nb in node_set:
                if flat(a) < flat(nb):
                    edges.append((a, nb, [a, nb]))
                continue
            if nb in visited:
                continue
            path = [a]
            prev, cur = a, nb
            while cur not in node_set:
                path.append(cur)
                visited.add(cur)
                nbs = neighbors(cur)
                nxt = nbs[0] if nbs[0] != prev else nbs[1]
                prev, cur = cur, nxt
            path.append(cur)
            edges.append((a, cur, path))
    # pure cycles: degree-2 voxels no node walk could reach
    leftover = sorted(fg - node_set - visited, key=flat)
    while leftover:
        seed = leftover[0]
        node_voxels.append(seed)
        node_set.add(seed)
        path = [seed]
        prev, cur = seed, neighbors(seed)[0]
        while cur != seed:
            path.append(cur)
            visited.add(cur)
            nbs = neighbors(cur)
            nxt = nbs[0] if nbs[0] != prev else nbs[1]
            prev, cur = cur, nxt
        path.append(seed)
        edges.append((seed, seed, path))
        leftover = sorted(fg - node_set - visited, key=flat)
    return node_voxels, edges


def _assemble(
    skel: np.ndarray,
    geometry: VolumeGeometry,
    root_hint,
    protected: frozenset,
) -> VesselTree:
    nx, ny, _ = geometry.dims
    node_voxels, raw_edges = _chain_decompose(skel, nx, ny, protected)
    if not node_voxels:
        raise ValueError("cannot build a tree from an empty skeleton")
    index_of = {v: n for n, v in enumerate(node_voxels)}
    spacing = np.asarray(geometry.spacing)

    lengths = [
        float(np.linalg.norm(np.diff(np.asarray(p, np.float64), axis=0) * spacing, axis=1).sum())
        for (_, _, p) in raw_edges
    ]

    # keep a minimum spanning forest: every cycle loses its longest edge
    # (ties resolved toward the smaller edge id)
    parent = list(range(len(node_voxels)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    keep = [False] * len(raw_edges)
    for eid in sorted(range(len(raw_edges)), key=lambda e: (lengths[e], e)):
        a, b, _ = raw_edges[eid]
        ra, rb = find(index_of[a]), find(index_of[b])
        if ra == rb:
            continue
        parent[ra] = rb
        keep[eid] = True

    positions = geometry.index_to_world(np.asarray(node_voxels, np.float64))
    d2 = np.sum((positions - np.asarray(root_hint, np.float64)) ** 2, axis=1)
    root_old = int(np.argmin(d2))  # ties fall to the smaller node id

    # restrict to the root's connected component
    adj: list[list[int]] = [[] for _ in node_voxels]
    for eid, (a, b, _) in enumerate(raw_edges):
        if keep[eid]:
            adj[index_of[a]].append(index_of[b])
            adj[index_of[b]].append(index_of[a])
    in_comp = [False] * len(node_voxels)
    in_comp[root_old] = True
    stack = [root_old]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not in_comp[v]:
                in_comp[v] = True
                stack.append(v)

    new_id = {}
    kept_voxels = []
    for old, v in enumerate(node_voxels):
        if in_comp[old]:
            new_id[old] = len(kept_voxels)
            kept_voxels.append(v)

    edges = []
    degree = [0] * len(kept_voxels)
    for eid, (a, b, path) in enumerate(raw_edges):
        if not keep[eid] or not in_comp[index_of[a]]:
            continue
        na, nb = new_id[index_of[a]], new_id[index_of[b]]
        edges.append(TreeEdge(len(edges), na, nb, np.asarray(path, np.int64)))
        degree[na] += 1
        degree[nb] += 1

    def flat(v):
        return v[0] + nx * (v[1] + ny * v[2])

    entry_ids = sorted(new_id[index_of[v]] for v in node_voxels if flat(v) in protected and in_comp[index_of[v]])
    root = new_id[root_old]
    nodes = tuple(
        TreeNode(
            i,
            (int(v[0]), int(v[1]), int(v[2])),
            tuple(float(c) for c in geometry.index_to_world(v)),
            degree[i],
        )
        for i, v in enumerate(kept_voxels)
    )
    branches = _assemble_branches(len(nodes), edges, degree, root, set(entry_ids))
    return VesselTree(geometry, nodes, tuple(edges), branches, root, tuple(entry_ids))


def _assemble_branches(n_nodes, edges, degree, root, anchors_extra):
    """Group edges into maximal chains through dissolvable (degree-2) nodes.

    The root and entry nodes always anchor a chain end, so no branch ever
    straddles them.
    """
    anchor = [degree[n] != 2 or n == root or n in anchors_extra for n in range(n_nodes)]
    inc: list[list[int]] = [[] for _ in range(n_nodes)]
    for e in edges:
        inc[e.node_from].append(e.id)
        inc[e.node_to].append(e.id)

    def other_end(eid, n):
        e = edges[eid]
        return e.node_to if e.node_from == n else e.node_from

    assigned = [False] * len(edges)
    branches = []
    for eid in range(len(edges)):
        if assigned[eid]:
            continue
        assigned[eid] = True
        chain = [eid]
        left, right = edges[eid].node_from, edges[eid].node_to
        while not anchor[right]:
            e2 = inc[right][0] if inc[right][0] != chain[-1] else inc[right][1]
            if assigned[e2]:
                break
            assigned[e2] = True
            chain.append(e2)
            right = other_end(e2, right)
        while not anchor[left]:
            e2 = inc[left][0] if inc[left][0] != chain[0] else inc[left][1]
            if assigned[e2]:
                break
            assigned[e2] = True
            chain.insert(0, e2)
            left = other_end(e2, left)
        branches.append(
            Branch(len(branches), tuple(chain), min(left, right), max(left, right))
        )
    return tuple(branches)


# ---------------------------------------------------------------------------
# public operations

def skeletonize(mask: LabelVolume) -> list[Centerline]:
    """Thin a binary mask to centerline paths.

    Topology is preserved exactly (same 26-connected component count, same
    loops), so a mask that is already a minimal curve comes back unchanged.
    Returns one Centerline per maximal chain; an empty mask yields [].
    """
    fg = mask.mask()
    if not fg.any():
        return []
    skel = _thin(fg, mask.geometry.spacing_zyx)
    nx, ny, _ = mask.geometry.dims
    node_voxels, edges = _chain_decompose(skel, nx, ny, frozenset())
    out = []
    for _, _, path in edges:
        if len(path) > 1 and path[0] == path[-1]:
            path = path[:-1]  # pure cycle: the closing step is implicit
        out.append(Centerline(mask.geometry, np.asarray(path, np.int64)))
    connected = {v for _, _, p in edges for v in p}
    for v in node_voxels:
        if v not in connected:
            out.append(Centerline(mask.geometry, np.asarray([v], np.int64)))
    return out


def build_tree(centerlines, root_hint) -> VesselTree:
    """Assemble centerlines into a rooted acyclic vessel tree.

    Nodes sit at voxels of 26-degree != 2, the root is the node nearest
    ``root_hint`` (world mm), every cycle is broken at its longest edge, and
    only the root's connected component is kept.
    """
    lines = list(centerlines)
    if not lines:
        raise ValueError("no centerlines given")
    geometry = lines[0].geometry
    for c in lines[1:]:
        if c.geometry != geometry:
            raise ValueError("centerlines disagree on geometry")
    grid = np.zeros(geometry.shape_zyx, bool)
    for c in lines:
        grid[c.voxels[:, 2], c.voxels[:, 1], c.voxels[:, 0]] = True
    return _assemble(grid, geometry, root_hint, frozenset())


def detect_entries(tree: VesselTree, kidney_mask: LabelVolume) -> VesselTree:
    """Mark where the tree first enters the mask on each root-to-leaf path.

    Returns a new tree in which every entry voxel is a node (edges are split
    there and branches re-anchored) and ``entries`` lists those node ids.
    Entries within one voxel step of each other merge into the one nearest
    the root. Without any centerline voxel inside the mask, a warning is
    issued and the tree is returned with no entries.
    """
    if kidney_mask.geometry != tree.geometry:
        raise ValueError("tree and mask must share one geometry")
    inside = kidney_mask.mask()
    nx, ny, _ = tree.geometry.dims

    def flat(v):
        return v[0] + nx * (v[1] + ny * v[2])

    inc: list[list[int]] = [[] for _ in tree.nodes]
    for e in tree.edges:
        inc[e.node_from].append(e.id)
        inc[e.node_to].append(e.id)

    hits = []  # (steps from root, linear index, voxel)
    root_vox = tree.nodes[tree.root].voxel
    root_inside = bool(inside[root_vox[2], root_vox[1], root_vox[0]])
    if root_inside:
        hits.append((0, flat(root_vox), root_vox))
    seen = {tree.root}
    stack = [(tree.root, root_inside, 0)]
    while stack:
        u, entered, steps = stack.pop()
        for eid in sorted(inc[u]):
            e = tree.edges[eid]
            v = e.node_to if e.node_from == u else e.node_from
            if v in seen:
                continue
            seen.add(v)
            seq = e.path[1:] if e.node_from == u else e.path[::-1][1:]
            ent = entered
            s = steps
            for vox in seq:
                s += 1
                if not ent and inside[vox[2], vox[1], vox[0]]:
                    w = (int(vox[0]), int(vox[1]), int(vox[2]))
                    hits.append((s, flat(w), w))
                    ent = True
            stack.append((v, ent, s))

    if not hits:
        warnings.warn(
            "no centerline voxel lies inside the mask; no entries detected",
            stacklevel=2,
        )
        return replace(tree, entries=())

    # merge entries within one voxel step, keeping the one nearest the root
    hits.sort()
    reps = []
    for s, f, v in hits:
        if any(
            max(abs(v[0] - r[0]), abs(v[1] - r[1]), abs(v[2] - r[2])) <= 1
            for r in reps
        ):
            continue
        reps.append(v)

    grid = np.zeros(tree.geometry.shape_zyx, bool)
    for e in tree.edges:
        grid[e.path[:, 2], e.path[:, 1], e.path[:, 0]] = True
    for nd in tree.nodes:
        grid[nd.voxel[2], nd.voxel[1], nd.voxel[0]] = True
    return _assemble(
        grid,
        tree.geometry,
        tree.nodes[tree.root].position_mm,
        frozenset(flat(v) for v in reps),
    )


def cluster_branches(tree: VesselTree, entries, level_offset: int = 0) -> BranchClustering:
    """Partition branches into per-entry groups at a bifurcation level.

    Offset 0 groups everything downstream of each entry; each -1 step moves
    group roots to their parent bifurcation and merges groups that meet
    there; each +1 step splits every group at its first downstream
    bifurcation. Offsets saturate at the root and at the leaves. Branches
    upstream of all group roots join the nearest downstream group (tree path
    distance, ties to the smaller group id).
    """
    entry_ids = tuple(sorted({int(e) for e in entries}))
    if not entry_ids:
        raise ValueError("entries must be non-empty")
    for e in entry_ids:
        if not 0 <= e < len(tree.nodes):
            raise ValueError(f"entry node {e} does not exist")
    if not tree.branches:
        return BranchClustering(int(level_offset), {}, 0)

    # orient the branch graph away from the root
    inc = defaultdict(list)
    for b in tree.branches:
        inc[b.node_a].append(b.id)
        inc[b.node_b].append(b.id)
    depth = {tree.root: 0}
    upstream: dict[int, int] = {}
    downstream: dict[int, int] = {}
    parent_branch: dict[int, int] = {}
    order = [tree.root]
    qi = 0
    while qi < len(order):
        u = order[qi]
        qi += 1
        for bid in sorted(inc[u]):
            if bid in upstream:
                continue
            b = tree.branches[bid]
            v = b.node_b if b.node_a == u else b.node_a
            upstream[bid] = u
            downstream[bid] = v
            depth[v] = depth[u] + 1
            parent_branch[v] = bid
            order.append(v)
    children: dict[int, list[int]] = defaultdict(list)
    for bid in range(len(tree.branches)):
        children[upstream[bid]].append(bid)
    for u in children:
        children[u].sort()

    # inclusive ancestor sets, one per anchor node / branch
    anc: dict[int, frozenset] = {tree.root: frozenset({tree.root})}
    for v in order[1:]:
        anc[v] = anc[upstream[parent_branch[v]]] | {v}
    branch_path: dict[int, frozenset] = {}
    for bid in sorted(range(len(tree.branches)), key=lambda b: depth[upstream[b]]):
        u = upstream[bid]
        base = branch_path[parent_branch[u]] if u != tree.root else frozenset()
        branch_path[bid] = base | {bid}

    def parent_bifurcation(n):
        cur = n
        while cur != tree.root:
            cur = upstream[parent_branch[cur]]
            if len(children.get(cur, ())) >= 2:
                return cur
        return tree.root

    def first_split_below(n, via):
        cur = downstream[via] if via is not None else n
        while True:
            ch = children.get(cur, [])
            if len(ch) >= 2:
                return [(cur, c) for c in ch]
            if not ch:
                return None
            cur = downstream[ch[0]]

    roots: list[tuple[int, int | None]] = [(e, None) for e in entry_ids]
    for _ in range(-int(level_offset) if level_offset < 0 else 0):
        roots = list(dict.fromkeys((parent_bifurcation(n), None) for n, _ in roots))
    for _ in range(int(level_offset) if level_offset > 0 else 0):
        moved: list[tuple[int, int | None]] = []
        for r in roots:
            split = first_split_below(r[0], r[1])
            moved.extend(split if split is not None else [r])
        roots = list(dict.fromkeys(moved))
    roots.sort(key=lambda r: (depth[r[0]], r[0], -1 if r[1] is None else r[1]))

    group: dict[int, int] = {}
    for bid in range(len(tree.branches)):
        best = None
        for gid, (n, via) in enumerate(roots):
            if via is None:
                hit = n in anc[upstream[bid]]
                key = (depth[n], 0)
            else:
                hit = via in branch_path[bid]
                key = (depth[n], 1)
            if hit and (best is None or key > best[0]):
                best = (key, gid)
        if best is not None:
            group[bid] = best[1]

    # upstream / side branches: nearest group, preferring downstream ones
    unassigned = [bid for bid in range(len(tree.branches)) if bid not in group]
    if unassigned:
        agraph = defaultdict(list)
        spacing = np.asarray(tree.geometry.spacing)
        for b in tree.branches:
            blen = sum(
                float(
                    np.linalg.norm(
                        np.diff(tree.edges[eid].path.astype(np.float64), axis=0) * spacing,
                        axis=1,
                    ).sum()
                )
                for eid in b.edges
            )
            agraph[b.node_a].append((b.node_b, blen))
            agraph[b.node_b].append((b.node_a, blen))
        dists = []
        for n, _ in roots:
            dist = {n: 0.0}
            pq = [(0.0, n)]
            while pq:
                d, u = heapq.heappop(pq)
                if d > dist.get(u, np.inf):
                    continue
                for v, w in agraph[u]:
                    nd = d + w
                    if nd < dist.get(v, np.inf):
                        dist[v] = nd
                        heapq.heappush(pq, (nd, v))
            dists.append(dist)
        for bid in unassigned:
            d_b = downstream[bid]
            best = min(
                (0 if d_b in anc[n] else 1, dists[gid][d_b], gid)
                for gid, (n, _) in enumerate(roots)
            )
            group[bid] = best[2]

    used = sorted(set(group.values()))
    remap = {g: i for i, g in enumerate(used)}
    return BranchClustering(
        int(level_offset), {b: remap[g] for b, g in group.items()}, len(used)
    )


# ---------------------------------------------------------------------------
# JSON form

def tree_to_json(tree: VesselTree) -> dict:
    """Plain-dict form: nodes/edges/branches/root/entries."""
    return {
        "nodes": [
            {
                "id": n.id,
                "x_mm": n.position_mm[0],
                "y_mm": n.position_mm[1],
                "z_mm": n.position_mm[2],
            }
            for n in tree.nodes
        ],
        "edges": [
            {"id": e.id, "from": e.node_from, "to": e.node_to, "path": e.path.tolist()}
            for e in tree.edges
        ],
        "branches": [{"id": b.id, "edges": list(b.edges)} for b in tree.branches],
        "root": tree.root,
        "entries": list(tree.entries),
    }


def tree_from_json(data: dict, geometry: VolumeGeometry) -> VesselTree:
    """Rebuild a VesselTree from its dict form on a known geometry."""
    try:
        nodes_raw = data["nodes"]
        edges_raw = data["edges"]
        branches_raw = data["branches"]
        root = int(data["root"])
        entries = tuple(int(e) for e in data["entries"])
    except KeyError as exc:
        raise ValueError(f"tree JSON is missing key {exc}") from None

    voxels = []
    positions = []
    for rec in sorted(nodes_raw, key=lambda r: int(r["id"])):
        pos = (float(rec["x_mm"]), float(rec["y_mm"]), float(rec["z_mm"]))
        vox = np.rint(geometry.world_to_index(pos)).astype(int)
        voxels.append((int(vox[0]), int(vox[1]), int(vox[2])))
        positions.append(pos)

    edges = []
    degree = [0] * len(voxels)
    for rec in sorted(edges_raw, key=lambda r: int(r["id"])):
        a, b = int(rec["from"]), int(rec["to"])
        edges.append(TreeEdge(int(rec["id"]), a, b, np.asarray(rec["path"], np.int64)))
        degree[a] += 1
        degree[b] += 1

    branches = []
    for rec in sorted(branches_raw, key=lambda r: int(r["id"])):
        chain = tuple(int(e) for e in rec["edges"])
        ends = Counter()
        for eid in chain:
            ends[edges[eid].node_from] += 1
            ends[edges[eid].node_to] += 1
        odd = sorted(nd for nd, c in ends.items() if c % 2 == 1)
        if len(odd) != 2:
            raise ValueError(f"branch {rec['id']} edges do not form an open chain")
        branches.append(Branch(int(rec["id"]), chain, odd[0], odd[1]))

    nodes = tuple(
        TreeNode(i, voxels[i], positions[i], degree[i]) for i in range(len(voxels))
    )
    return VesselTree(geometry, nodes, tuple(edges), tuple(branches), root, entries)
