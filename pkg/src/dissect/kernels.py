"""Sliced-Wasserstein and RBF kernels, gram matrices and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError
from .persistence import PersistenceDiagram

CAP_STRATEGIES = ("range-cap", "drop-essential", "separate-matching")


# --------------------------------------------------------------------------
# Infinite points
# --------------------------------------------------------------------------


def _finite_values(diagrams):
    vals = []
    for d in diagrams:
        pts = d.points
        vals.append(pts[:, 0])
        vals.append(pts[np.isfinite(pts[:, 1]), 1])
    vals = np.concatenate(vals) if vals else np.zeros(0)
    return vals[np.isfinite(vals)]


def range_cap(diagrams: Sequence[PersistenceDiagram]) -> float:
    """Replacement for ``+inf`` deaths: the lowest finite value minus the value range.

    With an empty or single-valued range the unit is ``max(|lo|, 1)``.
    """
    vals = _finite_values(diagrams)
    if vals.size == 0:
        return -1.0
    lo, hi = float(vals.min()), float(vals.max())
    unit = hi - lo
    if unit == 0:
        unit = max(abs(lo), 1.0)
    return lo - unit


def finitize(pd: PersistenceDiagram, cap: float, strategy: str = "range-cap"):
    """Return ``(finite_points, essential_births)`` ready for projection.

    ``range-cap`` moves every essential point's death to ``cap``;
    ``drop-essential`` discards essential points; ``separate-matching``
    returns the essential births separately so they can be matched among
    themselves.
    """
    pts = pd.points
    inf = ~np.isfinite(pts[:, 1])
    if strategy == "range-cap":
        out = pts.copy()
        out[inf, 1] = cap
        return out, np.zeros(0)
    if strategy == "drop-essential":
        return pts[~inf], np.zeros(0)
    if strategy == "separate-matching":
        return pts[~inf], np.sort(pts[inf, 0])
    raise ValueError(f"unknown cap strategy {strategy!r}, expected one of {CAP_STRATEGIES}")


# --------------------------------------------------------------------------
# Sliced-Wasserstein distance
# --------------------------------------------------------------------------


def directions(M: int) -> np.ndarray:
    """``M`` unit vectors at angles ``-pi/2 + i*pi/M``, shape ``(2, M)``."""
    if M < 1:
        raise ValueError("need at least one direction")
    theta = -np.pi / 2 + np.arange(M) * np.pi / M
    return np.stack([np.cos(theta), np.sin(theta)])


def _project(points, dirs):
    """Projections of the points and of their diagonal projections."""
    proj = points @ dirs
    mid = (points[:, 0] + points[:, 1]) / 2.0
    diag = mid[:, None] * (dirs[0] + dirs[1])[None, :]
    return proj, diag


def _sw_projected(p1, d1, p2, d2):
    a = np.sort(np.concatenate([p1, d2]), axis=0)
    b = np.sort(np.concatenate([p2, d1]), axis=0)
    return float(np.mean(np.sum(np.abs(a - b), axis=0)))


def _essential_distance(b1, b2, cap):
    """1-D transport between sorted essential births; surplus points go to ``cap``."""
    n = max(len(b1), len(b2))
    if n == 0:
        return 0.0
    a = np.concatenate([b1, np.full(n - len(b1), cap)])
    b = np.concatenate([b2, np.full(n - len(b2), cap)])
    return float(np.sum(np.abs(np.sort(a) - np.sort(b))))


def sliced_wasserstein(P, Q, M: int = 50) -> float:
    """Sliced-Wasserstein distance between two finite point sets in the plane.

    Each diagram is augmented with the diagonal projections of the other's
    points; the distance is the mean over ``M`` directions of the 1-D
    transport cost between the sorted projections.
    """
    dirs = directions(M)
    P = np.asarray(P, dtype=np.float64).reshape(-1, 2)
    Q = np.asarray(Q, dtype=np.float64).reshape(-1, 2)
    return _sw_projected(*_project(P, dirs), *_project(Q, dirs))


def sw_distance(
    d1: PersistenceDiagram,
    d2: PersistenceDiagram,
    M: int = 50,
    strategy: str = "range-cap",
    cap: Optional[float] = None,
) -> float:
    """Sliced-Wasserstein distance between two persistence diagrams.

    ``cap`` defaults to :func:`range_cap` over the pair.
    """
    if cap is None:
        cap = range_cap([d1, d2])
    f1, e1 = finitize(d1, cap, strategy)
    f2, e2 = finitize(d2, cap, strategy)
    dist = sliced_wasserstein(f1, f2, M)
    if strategy == "separate-matching":
        dist += _essential_distance(e1, e2, cap)
    return dist


def sw_distances(
    diagrams_a,
    diagrams_b=None,
    M: int = 50,
    strategy: str = "range-cap",
    cap: Optional[float] = None,
) -> np.ndarray:
    """Matrix of pairwise SW distances.

    One cap is shared by every pair (computed over both collections unless
    given) so that entries are mutually consistent.
    """
    same = diagrams_b is None
    if same:
        diagrams_b = diagrams_a
    if cap is None:
        cap = range_cap(list(diagrams_a) + ([] if same else list(diagrams_b)))
    dirs = directions(M)

    def prep(diagrams):
        out = []
        for d in diagrams:
            f, e = finitize(d, cap, strategy)
            out.append(_project(f, dirs) + (e,))
        return out

    pa = prep(diagrams_a)
    pb = pa if same else prep(diagrams_b)
    D = np.zeros((len(pa), len(pb)))
    for i, (p1, g1, e1) in enumerate(pa):
        for j in range(i + 1 if same else 0, len(pb)):
            p2, g2, e2 = pb[j]
            d = _sw_projected(p1, g1, p2, g2)
            if strategy == "separate-matching":
                d += _essential_distance(e1, e2, cap)
            D[i, j] = d
            if same:
                D[j, i] = d
    return D


# --------------------------------------------------------------------------
# Gram matrices
# --------------------------------------------------------------------------


@dataclass
class GramMatrix:
    values: np.ndarray
    row_ids: list = field(default_factory=list)
    col_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n, m = self.values.shape
        if not self.row_ids:
            self.row_ids = [str(i) for i in range(n)]
        if not self.col_ids:
            self.col_ids = [str(j) for j in range(m)]
        if len(self.row_ids) != n or len(self.col_ids) != m:
            raise ShapeError("identifier count does not match the gram shape")

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id"] + [str(c) for c in self.col_ids])
            for rid, row in zip(self.row_ids, self.values.tolist()):
                w.writerow([str(rid)] + [format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        header = rows[0]
        if not header or header[0] != "id":
            raise ValueError(f"{path}: expected an 'id' header cell")
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(
            len(rows) - 1, len(header) - 1
        )
        return cls(values, [r[0] for r in rows[1:]], header[1:])


def kernel_from_distances(D, sigma: float) -> np.ndarray:
    """``exp(-D / (2 sigma^2))``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return np.exp(-np.asarray(D) / (2.0 * sigma * sigma))


def median_sigma(D) -> float:
    """Bandwidth that puts the median off-diagonal exponent at 1.

    ``D`` holds the quantity divided by ``2 sigma^2`` in the kernel (SW
    distances, or squared Euclidean distances for the RBF kernel). Falls
    back to 1 when the median is 0.
    """
    D = np.asarray(D)
    if D.shape[0] == D.shape[1]:
        vals = D[np.triu_indices(D.shape[0], k=1)]
    else:
        vals = D.ravel()
    med = float(np.median(vals)) if vals.size else 0.0
    return float(np.sqrt(med / 2.0)) if med > 0 else 1.0


def sw_gram(
    diagrams_a,
    diagrams_b=None,
    M: int = 50,
    sigma: float = 1.0,
    strategy: str = "range-cap",
    cap: Optional[float] = None,
    row_ids=None,
    col_ids=None,
) -> GramMatrix:
    """Sliced-Wasserstein kernel matrix ``exp(-SW / (2 sigma^2))``."""
    D = sw_distances(diagrams_a, diagrams_b, M, strategy, cap)
    K = kernel_from_distances(D, sigma)
    if diagrams_b is None:
        np.fill_diagonal(K, 1.0)
        col_ids = row_ids
    return GramMatrix(K, list(row_ids or []), list(col_ids or []))


def squared_distances(A, B=None) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"feature lengths differ: {A.shape[1]} vs {B.shape[1]}")
    D = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(D, 0.0)


def rbf_gram(features_a, features_b=None, sigma: float = 1.0, row_ids=None, col_ids=None) -> GramMatrix:
    """Gaussian kernel matrix ``exp(-||a - b||^2 / (2 sigma^2))``."""
    same = features_b is None
    K = kernel_from_distances(squared_distances(features_a, features_b), sigma)
    if same:
        np.fill_diagonal(K, 1.0)
        col_ids = row_ids
    return GramMatrix(K, list(row_ids or []), list(col_ids or []))
