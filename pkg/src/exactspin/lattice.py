"""Finite boxes of Z^d, nearest-neighbour geometry, and cluster passes.

Vertices are integer tuples.  A box of radius n around a center c is the
open cube (c - n, c + n)^d intersected with Z^d, so it holds (2n-1)^d
sites.  Cluster algorithms operate both on the fine lattice (edge
percolation components) and on the coarse space-time grid of cells used
by the coarse-graining layer.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Set, Tuple

Vertex = Tuple[int, ...]
Edge = Tuple[Vertex, Vertex]
Cell = Tuple[int, Tuple[int, ...]]  # (time index j <= 0, spatial index x)


class WindowTooSmallError(RuntimeError):
    """A cluster reached the edge of its declared finite window."""


def canonical_edge(u: Vertex, v: Vertex) -> Edge:
    """Order the endpoints so each undirected edge has one key."""
    return (u, v) if u <= v else (v, u)


def neighbors(v: Vertex) -> List[Vertex]:
    """The 2d nearest neighbours of v in Z^d."""
    out = []
    for i in range(len(v)):
        for step in (-1, 1):
            w = list(v)
            w[i] += step
            out.append(tuple(w))
    return out


@dataclass(frozen=True)
class BoxRegion:
    """The lattice box (center - n, center + n)^d cap Z^d."""

    d: int
    n: int
    center: Vertex

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.n < 1:
            raise ValueError("radius must be >= 1")
        if len(self.center) != self.d:
            raise ValueError("center has wrong dimension")

    @property
    def size(self) -> int:
        return (2 * self.n - 1) ** self.d

    def contains(self, v: Vertex) -> bool:
        return all(abs(v[i] - self.center[i]) < self.n for i in range(self.d))

    def vertices(self) -> List[Vertex]:
        ranges = [
            range(c - self.n + 1, c + self.n) for c in self.center
        ]
        return [tuple(p) for p in itertools.product(*ranges)]

    def interior_edges(self) -> List[Edge]:
        """Nearest-neighbour edges with both endpoints inside the box."""
        out = []
        for v in self.vertices():
            for i in range(self.d):
                w = list(v)
                w[i] += 1
                w = tuple(w)
                if self.contains(w):
                    out.append((v, w))
        return out

    def exterior_boundary(self) -> List[Vertex]:
        """Sites outside the box adjacent to at least one inside site."""
        seen: Set[Vertex] = set()
        for v in self.vertices():
            for w in neighbors(v):
                if not self.contains(w) and w not in seen:
                    seen.add(w)
        return sorted(seen)


def build_box(d: int, n: int, center: Vertex | None = None) -> BoxRegion:
    """Box of radius n around center (default the origin)."""
    if center is None:
        center = (0,) * d
    return BoxRegion(d=d, n=n, center=tuple(center))


class DisjointSets:
    """Union-find forest with union by rank and path compression."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n
        self.count = n

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        self.count -= 1
        return True


@dataclass
class ClusterPartition:
    """Connected components of a region under declared open edges."""

    elements: List
    labels: List[int]
    _index: Dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self._index:
            self._index = {e: i for i, e in enumerate(self.elements)}

    def label(self, element) -> int:
        return self.labels[self._index[element]]

    def components(self) -> List[FrozenSet]:
        groups: Dict[int, List] = {}
        for e, lab in zip(self.elements, self.labels):
            groups.setdefault(lab, []).append(e)
        return [frozenset(g) for g in groups.values()]

    def same_component(self, a, b) -> bool:
        return self.label(a) == self.label(b)

    @property
    def component_count(self) -> int:
        return len(set(self.labels))


def fine_clusters(
    open_edges: Iterable[Edge] | Mapping[Edge, int],
    region: BoxRegion | Sequence[Vertex],
) -> ClusterPartition:
    """Components of the region under the given open nearest-neighbour edges.

    ``open_edges`` is either a collection of open edges or a mapping
    edge -> {0,1}; edges touching vertices outside the region are
    rejected.
    """
    if isinstance(region, BoxRegion):
        verts = region.vertices()
    else:
        verts = list(region)
    index = {v: i for i, v in enumerate(verts)}
    ds = DisjointSets(len(verts))
    if isinstance(open_edges, Mapping):
        edge_iter = (e for e, bit in open_edges.items() if bit)
    else:
        edge_iter = iter(open_edges)
    for (u, v) in edge_iter:
        if u not in index or v not in index:
            raise ValueError(f"edge ({u}, {v}) leaves the region")
        ds.union(index[u], index[v])
    # densify labels so equal labels mean equal components
    roots = [ds.find(i) for i in range(len(verts))]
    remap: Dict[int, int] = {}
    labels = []
    for r in roots:
        if r not in remap:
            remap[r] = len(remap)
        labels.append(remap[r])
    return ClusterPartition(elements=verts, labels=labels, _index=index)


def bfs_components(verts: Sequence[Vertex], open_edges: Set[Edge]) -> List[Set[Vertex]]:
    """Independent breadth-first component oracle (test reference)."""
    vert_set = set(verts)
    seen: Set[Vertex] = set()
    comps = []
    for v in verts:
        if v in seen:
            continue
        comp = {v}
        queue = [v]
        seen.add(v)
        while queue:
            cur = queue.pop()
            for w in neighbors(cur):
                if w in vert_set and w not in seen and canonical_edge(cur, w) in open_edges:
                    seen.add(w)
                    comp.add(w)
                    queue.append(w)
        comps.append(comp)
    return comps


# ---------------------------------------------------------------------------
# Coarse space-time grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoarseCell:
    """One cell of the coarse space-time grid.

    Cell (j, x) with j <= 0 owns the fine time slab (L*(j-1), L*j] and
    the spatial core box of radius n_L around L*x.  Its dynamics are
    started n_L fine time units before the slab, on the box of radius
    2*n_L, which is also its dependence zone.
    """

    j: int
    x: Tuple[int, ...]
    L: int
    delta: float

    def __post_init__(self):
        if self.j > 0:
            raise ValueError("time index must be <= 0")
        if self.L < 1:
            raise ValueError("scale L must be >= 1")
        if not (0.0 < self.delta < 1.0):
            raise ValueError("mesh delta must be in (0, 1)")

    @property
    def n_L(self) -> int:
        return math.ceil(self.L / self.delta)

    @property
    def slab(self) -> Tuple[float, float]:
        return (self.L * (self.j - 1), self.L * self.j)

    @property
    def run_start(self) -> float:
        return self.L * (self.j - 1) - self.n_L

    def fine_center(self) -> Vertex:
        return tuple(self.L * xi for xi in self.x)

    def core_box(self) -> BoxRegion:
        return build_box(len(self.x), self.n_L, self.fine_center())

    def zone_box(self) -> BoxRegion:
        return build_box(len(self.x), 2 * self.n_L, self.fine_center())


@dataclass(frozen=True)
class CellWindow:
    """A finite rectangle of coarse cells: j in [j_min, j_max], |x_i| <= x_radius."""

    j_min: int
    j_max: int
    x_radius: int
    d: int

    def __post_init__(self):
        if self.j_min > self.j_max or self.j_max > 0:
            raise ValueError("need j_min <= j_max <= 0")
        if self.x_radius < 0:
            raise ValueError("x_radius must be >= 0")

    def contains(self, cell: Cell) -> bool:
        j, x = cell
        return (
            self.j_min <= j <= self.j_max
            and len(x) == self.d
            and all(abs(xi) <= self.x_radius for xi in x)
        )

    def cells(self) -> List[Cell]:
        space = itertools.product(
            *[range(-self.x_radius, self.x_radius + 1) for _ in range(self.d)]
        )
        cells = []
        for x in space:
            for j in range(self.j_min, self.j_max + 1):
                cells.append((j, tuple(x)))
        return cells

    def on_boundary(self, cell: Cell) -> bool:
        j, x = cell
        return (
            j == self.j_min
            or j == self.j_max
            or any(abs(xi) == self.x_radius for xi in x)
        )

    @property
    def size(self) -> int:
        return (self.j_max - self.j_min + 1) * (2 * self.x_radius + 1) ** self.d


class CellField:
    """0/1 values over a cell window (plain container, duck-typed)."""

    def __init__(self, window: CellWindow, values: Mapping[Cell, int]):
        self.window = window
        self.values = dict(values)

    def value(self, cell: Cell) -> int:
        if not self.window.contains(cell):
            raise ValueError(f"cell {cell} outside the window")
        return self.values[cell]


def _star_neighbors(cell: Cell) -> List[Cell]:
    j, x = cell
    d = len(x)
    out = []
    for dj in (-1, 0, 1):
        for dx in itertools.product(*([(-1, 0, 1)] * d)):
            if dj == 0 and all(s == 0 for s in dx):
                continue
            out.append((j + dj, tuple(xi + s for xi, s in zip(x, dx))))
    return out


def star_zero_cluster(theta, origin: Cell) -> Set[Cell]:
    """The *-connected component of 0-cells containing origin.

    ``theta`` must expose ``window`` and ``value(cell)``.  Returns the
    empty set when the origin cell has value 1.  Adjacency is l-infinity
    distance one on the coarse grid, time included.
    """
    window = theta.window
    if not window.contains(origin):
        raise ValueError(f"origin {origin} outside the theta window")
    if theta.value(origin) == 1:
        return set()
    cluster = {origin}
    queue = [origin]
    while queue:
        cur = queue.pop()
        for nb in _star_neighbors(cur):
            if nb in cluster or not window.contains(nb):
                continue
            if theta.value(nb) == 0:
                cluster.add(nb)
                queue.append(nb)
    return cluster


def star_boundary(cluster: Set[Cell], window: CellWindow) -> Set[Cell]:
    """Cells at *-distance one from the cluster, inside the window."""
    out: Set[Cell] = set()
    for cell in cluster:
        for nb in _star_neighbors(cell):
            if nb not in cluster and window.contains(nb):
                out.add(nb)
    return out


def cluster_touches_boundary(cluster: Set[Cell], window: CellWindow) -> bool:
    return any(window.on_boundary(c) for c in cluster)


def _cell_nn_neighbors(cell: Cell) -> List[Cell]:
    j, x = cell
    out = [(j - 1, x), (j + 1, x)]
    for i in range(len(x)):
        for s in (-1, 1):
            y = list(x)
            y[i] += s
            out.append((j, tuple(y)))
    return out


def external_complement(cluster: Set[Cell], N: int, window: CellWindow, L: int) -> Set[Cell]:
    """Cells far from the cluster and connected to the window exterior.

    A cell y qualifies when its l-infinity distance in the fine graph
    from every cluster cell exceeds L*N (equivalently its coarse
    distance exceeds N), and a nearest-neighbour path inside the window
    avoiding the cluster joins y to the window's boundary layer.
    "Connected to infinity" is rendered as window-exiting because all
    windows here are finite.
    """
    if N < 1:
        raise ValueError("N must be a positive integer")
    for c in cluster:
        if not window.contains(c):
            raise WindowTooSmallError(
                f"cluster cell {c} exceeds the declared window"
            )

    # reachability from the window boundary through the cluster complement
    reachable: Set[Cell] = set()
    queue: List[Cell] = []
    for cell in window.cells():
        if cell in cluster:
            continue
        if window.on_boundary(cell):
            reachable.add(cell)
            queue.append(cell)
    while queue:
        cur = queue.pop()
        for nb in _cell_nn_neighbors(cur):
            if nb in reachable or nb in cluster or not window.contains(nb):
                continue
            reachable.add(nb)
            queue.append(nb)

    def coarse_dist(a: Cell, b: Cell) -> int:
        da = abs(a[0] - b[0])
        for u, v in zip(a[1], b[1]):
            da = max(da, abs(u - v))
        return da

    out: Set[Cell] = set()
    for cell in reachable:
        if all(coarse_dist(cell, c) > N for c in cluster):
            out.add(cell)
    return out
