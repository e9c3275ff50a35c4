"""Exact nearest-neighbour queries, garment-to-body correspondences and KNN pooling.

Candidates come from :class:`scipy.spatial.cKDTree`; the final ordering is
recomputed here from squared distances with ties broken by the lowest point
index, so results match a brute-force scan exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyPointSet, KTooLarge

DEFAULT_POOLING_K = 15
DEFAULT_DOWNSAMPLE_FACTOR = 10


def thread_count():
    """Worker cap from ``DRAPEGEOM_THREADS`` (default 1)."""
    raw = os.environ.get("DRAPEGEOM_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(n, 1)


class PointIndex:
    """Immutable exact KNN index over a point set."""

    def __init__(self, points):
        pts = np.array(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyPointSet("cannot index an empty point set")
        pts.setflags(write=False)
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self):
        return len(self.points)

    def query(self, queries, k):
        """K nearest points for each query row.

        Returns ``(indices, distances)`` of shape (q, k), ascending by
        distance, ties resolved towards the lower index.
        """
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if k < 1:
            raise ValueError("k must be >= 1")
        if k > n:
            raise KTooLarge(f"k={k} exceeds point count {n}")
        out_idx = np.empty((len(q), k), dtype=np.int64)
        out_d2 = np.empty((len(q), k))
        if len(q) == 0:
            return out_idx, np.sqrt(out_d2)
        if k == n:
            for r, row in enumerate(q):
                d2 = _sqdist(self.points, row)
                order = np.lexsort((np.arange(n), d2))
                out_idx[r] = order
                out_d2[r] = d2[order]
            return out_idx, np.sqrt(out_d2)

        # a few extra candidates absorb most ties; rows with a tie at the
        # k-th distance fall back to an exhaustive radius search
        extra = min(n, k + 4)
        dist, cand = self._tree.query(q, k=extra, workers=thread_count())
        dist = dist.reshape(len(q), extra)
        cand = cand.reshape(len(q), extra)
        for r in range(len(q)):
            idx = cand[r]
            d2 = _sqdist(self.points[idx], q[r])
            order = np.lexsort((idx, d2))
            idx, d2 = idx[order], d2[order]
            kth = d2[k - 1]
            need_more = extra < n and d2[-1] <= kth * (1 + 1e-9) + 1e-300
            if need_more or dist[r, -1] <= dist[r, k - 1] * (1 + 1e-9):
                radius = math.sqrt(kth) * (1 + 1e-7) + 1e-300
                idx = np.asarray(self._tree.query_ball_point(q[r], radius), dtype=np.int64)
                d2 = _sqdist(self.points[idx], q[r])
                order = np.lexsort((idx, d2))
                idx, d2 = idx[order], d2[order]
            out_idx[r] = idx[:k]
            out_d2[r] = d2[:k]
        return out_idx, np.sqrt(out_d2)


def _sqdist(points, q):
    # fixed left-to-right order so that tied distances round identically
    # for every point, independent of SIMD reductions
    d = points - q
    return (d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2]


def build_index(points):
    return PointIndex(points)


def knn(index, query, k):
    """K (index, distance) pairs for a single query point, ascending."""
    idx, dist = index.query(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
    return list(zip(idx[0].tolist(), dist[0].tolist()))


@dataclass(frozen=True)
class CorrespondenceSet:
    """Nearest body vertex for every garment vertex.

    ``pairs[j] == (j, body_index[j])``.
    """

    body_index: np.ndarray
    distances: np.ndarray

    @property
    def pairs(self):
        g = np.arange(len(self.body_index))
        return np.stack([g, self.body_index], axis=1)

    def __len__(self):
        return len(self.body_index)


def nearest_correspondences(garment, body, body_index=None):
    """Match every garment vertex to its nearest body vertex.

    ``garment`` and ``body`` may be meshes or (n, 3) arrays. Pass a prebuilt
    ``body_index`` to avoid rebuilding the tree on every call.
    """
    g = getattr(garment, "vertices", garment)
    if body_index is None:
        body_index = PointIndex(getattr(body, "vertices", body))
    g = np.asarray(g, dtype=np.float64).reshape(-1, 3)
    if len(g) == 0:
        raise EmptyPointSet("garment has no vertices")
    idx, dist = body_index.query(g, 1)
    return CorrespondenceSet(body_index=idx[:, 0], distances=dist[:, 0])


def downsample_points(points, factor=DEFAULT_DOWNSAMPLE_FACTOR):
    """Farthest-point sampling of ``ceil(n / factor)`` points seeded at index 0.

    Ties in the farthest distance go to the lowest index.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        raise EmptyPointSet("cannot downsample an empty point set")
    m = math.ceil(n / factor)
    if m >= n:
        return np.arange(n)
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = 0
    best = _sqdist(pts, pts[0])
    for s in range(1, m):
        nxt = int(np.argmax(best))  # argmax returns the first maximum
        chosen[s] = nxt
        best = np.minimum(best, _sqdist(pts, pts[nxt]))
    return chosen


def knn_pool(features, index, queries, k=DEFAULT_POOLING_K, reduce="max"):
    """Pool ``features`` of each query's K nearest indexed points.

    ``reduce`` is ``"max"`` (component-wise max) or ``"mean"``.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if len(feats) != len(index):
        raise ValueError("features must be parallel to the indexed points")
    nbr, _ = index.query(queries, k)
    gathered = feats[nbr]
    if reduce == "max":
        return gathered.max(axis=1)
    if reduce == "mean":
        return gathered.mean(axis=1)
    raise ValueError(f"unknown reduction {reduce!r}")


def knn_max_pool(features, index, queries, k=DEFAULT_POOLING_K):
    return knn_pool(features, index, queries, k, reduce="max")


def knn_avg_pool(features, index, queries, k=16):
    return knn_pool(features, index, queries, k, reduce="mean")
