"""0-dimensional persistence of weighted graphs.

Edges enter the filtration at value ``-|w|``, strongest first. A connected
component is born with its first edge (vertices alone create nothing) and
dies when an edge joins it to an older component; components still alive
at the end get death ``+inf``.

Ties are resolved deterministically: edges with equal filtration value are
processed in ``(u, v)`` order, and when two components with equal birth
merge, the one whose smallest vertex index is larger dies.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    points: np.ndarray  # (n, 2) of (birth, death); death may be +inf

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, PersistenceDiagram):
            return NotImplemented
        return np.array_equal(_sorted_points(self.points), _sorted_points(other.points))

    __hash__ = None

    @property
    def births(self):
        return self.points[:, 0]

    @property
    def deaths(self):
        return self.points[:, 1]

    def finite(self):
        return self.points[np.isfinite(self.deaths)]

    def essential(self):
        return self.points[~np.isfinite(self.deaths)]

    def as_tuples(self):
        """Points as a sorted list of ``(birth, death)`` tuples (a multiset)."""
        return sorted(map(tuple, self.points.tolist()))


def _sorted_points(points):
    if len(points) == 0:
        return points
    return points[np.lexsort((points[:, 1], points[:, 0]))]


class PDStats(NamedTuple):
    total_points: int
    infinite_points: int


def pd0_edges(src, dst, weight) -> PersistenceDiagram:
    """Diagram of the graph given as parallel edge arrays."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    if np.any(weight < 0):
        raise ValueError("edge weights must be nonnegative")
    if not np.all(np.isfinite(weight)):
        raise ValueError("edge weights must be finite")
    filt = -weight
    order = np.lexsort((dst, src, filt))

    parent = {}
    birth = {}  # root -> birth value
    low = {}  # root -> smallest vertex in the component

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    points = []
    for e in order.tolist():
        u, v, t = int(src[e]), int(dst[e]), float(filt[e])
        ru = find(u) if u in parent else None
        rv = find(v) if v in parent else None
        if ru is None and rv is None:
            parent[u] = u
            parent[v] = u
            birth[u] = t
            low[u] = min(u, v)
        elif ru is None:
            parent[u] = rv
            low[rv] = min(low[rv], u)
        elif rv is None:
            parent[v] = ru
            low[ru] = min(low[ru], v)
        elif ru != rv:
            # elder rule; equal births: larger smallest-vertex dies
            if (birth[ru], low[ru]) > (birth[rv], low[rv]):
                ru, rv = rv, ru
            points.append((birth[rv], t))
            parent[rv] = ru
            low[ru] = min(low[ru], low[rv])
            del birth[rv], low[rv]
    for root in birth:
        points.append((birth[root], np.inf))
    pts = np.array(points, dtype=np.float64).reshape(-1, 2)
    return PersistenceDiagram(_sorted_points(pts))


def pd0(graph) -> PersistenceDiagram:
    """Persistence diagram of an :class:`~dissect.graph.InducedGraph`."""
    return pd0_edges(graph.src, graph.dst, graph.weight)


def pd_stats(pd: PersistenceDiagram) -> PDStats:
    return PDStats(len(pd), int(np.sum(~np.isfinite(pd.deaths))))


def write_diagram_csv(pd: PersistenceDiagram, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["birth", "death"])
        for b, d in pd.points.tolist():
            w.writerow([repr(b), "inf" if d == np.inf else repr(d)])


def read_diagram_csv(path) -> PersistenceDiagram:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["birth", "death"]:
        raise ValueError(f"{path}: expected a 'birth,death' header")
    return PersistenceDiagram(np.array([[float(b), float(d)] for b, d in rows[1:]]))
