"""Balanced 2-d KD-tree over pixel coordinates with exact tie handling.

Queries return exactly the same neighbor set as exhaustive search: nearest
by squared Euclidean distance, distance ties broken by lower point index.
Tree points whose coordinates equal the query exactly are excluded (a
point is never its own neighbor).  Coordinates are stored as float64, so
integer-valued pixel coordinates give exact squared distances.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap if not (args and callable(args[0])) else args[0]


class EmptyInput(Exception):
    """KD-tree construction requires at least one point."""


class KdTree2D:
    """Median-split tree stored in flat arrays.

    node arrays are indexed by node id; `point[i]` is the index of the
    point stored at node i, `axis[i]` its split axis, `left`/`right` the
    child node ids (-1 for none).
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must be an (N, 2) array")
        if pts.shape[0] == 0:
            raise EmptyInput("cannot build a KD-tree over zero points")
        n = pts.shape[0]
        self.points = pts
        self.point = np.empty(n, dtype=np.int64)
        self.axis = np.empty(n, dtype=np.int64)
        self.left = np.full(n, -1, dtype=np.int64)
        self.right = np.full(n, -1, dtype=np.int64)
        self._next = 0
        self.root = self._build(np.arange(n, dtype=np.int64), 0)

    def __len__(self):
        return self.points.shape[0]

    def _build(self, indices, depth):
        if indices.size == 0:
            return -1
        ax = depth % 2
        # Deterministic median: order by (coordinate, index).
        order = np.lexsort((indices, self.points[indices, ax]))
        indices = indices[order]
        mid = indices.size // 2
        node = self._next
        self._next += 1
        self.point[node] = indices[mid]
        self.axis[node] = ax
        left = self._build(indices[:mid], depth + 1)
        right = self._build(indices[mid + 1:], depth + 1)
        self.left[node] = left
        self.right[node] = right
        return node


@njit(cache=True)
def _knn_kernel(pts, node_point, node_axis, node_left, node_right, root,
                qu, qv, k, out_idx):
    """Iterative best-k search; returns the number of neighbors found.

    Candidate ordering is lexicographic on (squared distance, index), which
    realizes both the nearest-first ordering and the low-index tie rule.
    """
    best_d = np.empty(k, dtype=np.float64)
    best_i = np.empty(k, dtype=np.int64)
    count = 0
    stack = np.empty(64, dtype=np.int64)
    top = 0
    stack[top] = root
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if node < 0:
            continue
        pi = node_point[node]
        du = pts[pi, 0] - qu
        dv = pts[pi, 1] - qv
        d2 = du * du + dv * dv
        if d2 != 0.0 or pts[pi, 0] != qu or pts[pi, 1] != qv:
            if count < k:
                # insertion sort into the current best list
                j = count
                while j > 0 and (best_d[j - 1] > d2 or
                                 (best_d[j - 1] == d2 and best_i[j - 1] > pi)):
                    best_d[j] = best_d[j - 1]
                    best_i[j] = best_i[j - 1]
                    j -= 1
                best_d[j] = d2
                best_i[j] = pi
                count += 1
            elif d2 < best_d[k - 1] or (d2 == best_d[k - 1] and pi < best_i[k - 1]):
                j = k - 1
                while j > 0 and (best_d[j - 1] > d2 or
                                 (best_d[j - 1] == d2 and best_i[j - 1] > pi)):
                    best_d[j] = best_d[j - 1]
                    best_i[j] = best_i[j - 1]
                    j -= 1
                best_d[j] = d2
                best_i[j] = pi
        ax = node_axis[node]
        qc = qu if ax == 0 else qv
        diff = qc - pts[pi, ax]
        if diff < 0.0:
            near, far = node_left[node], node_right[node]
        else:
            near, far = node_right[node], node_left[node]
        # The far side can still hold an equal-distance lower-index point,
        # so prune only on strict inequality.
        visit_far = count < k or diff * diff <= best_d[k - 1]
        if visit_far and far >= 0:
            stack[top] = far
            top += 1
        if near >= 0:
            stack[top] = near
            top += 1
    for j in range(count):
        out_idx[j] = best_i[j]
    return count


@njit(cache=True)
def _knn_batch_kernel(pts, node_point, node_axis, node_left, node_right, root,
                      queries, k, out_idx, out_count):
    for qi in range(queries.shape[0]):
        out_count[qi] = _knn_kernel(pts, node_point, node_axis, node_left,
                                    node_right, root, queries[qi, 0],
                                    queries[qi, 1], k, out_idx[qi])


def _knn_python(tree: KdTree2D, qu, qv, k):
    """Reference traversal used when numba is unavailable."""
    pts = tree.points
    best: list[tuple[float, int]] = []

    def visit(node):
        if node < 0:
            return
        pi = int(tree.point[node])
        du = pts[pi, 0] - qu
        dv = pts[pi, 1] - qv
        d2 = du * du + dv * dv
        if pts[pi, 0] != qu or pts[pi, 1] != qv:
            entry = (d2, pi)
            if len(best) < k:
                best.append(entry)
                best.sort()
            elif entry < best[-1]:
                best[-1] = entry
                best.sort()
        ax = int(tree.axis[node])
        qc = qu if ax == 0 else qv
        diff = qc - pts[pi, ax]
        near, far = ((tree.left[node], tree.right[node]) if diff < 0
                     else (tree.right[node], tree.left[node]))
        visit(int(near))
        if len(best) < k or diff * diff <= best[-1][0]:
            visit(int(far))

    visit(tree.root)
    return np.array([i for _, i in best], dtype=np.int64)


def build_kdtree(points) -> KdTree2D:
    return KdTree2D(points)


def knn(tree: KdTree2D, query, k: int) -> np.ndarray:
    """Indices of the min(k, available) nearest tree points to `query`.

    Points located exactly at the query coordinates are excluded, so a
    tree member never retrieves itself.  Results are ordered nearest
    first; exact distance ties are ordered by index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    qu, qv = float(query[0]), float(query[1])
    cap = min(int(k), len(tree))
    if not _HAVE_NUMBA:  # pragma: no cover
        return _knn_python(tree, qu, qv, cap)
    out = np.empty(cap, dtype=np.int64)
    found = _knn_kernel(tree.points, tree.point, tree.axis, tree.left,
                        tree.right, tree.root, qu, qv, cap, out)
    return out[:found]


def knn_batch(tree: KdTree2D, queries, k: int):
    """Vectorized `knn` over many queries.

    Returns (indices, counts): an (n_queries, min(k, n)) index array padded
    with -1 past each query's count, and the per-query neighbor counts.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64))
    if q.ndim != 2 or q.shape[1] != 2:
        raise ValueError("queries must be (N, 2)")
    cap = min(int(k), len(tree))
    out = np.full((q.shape[0], cap), -1, dtype=np.int64)
    counts = np.zeros(q.shape[0], dtype=np.int64)
    if not _HAVE_NUMBA:  # pragma: no cover
        for i in range(q.shape[0]):
            res = _knn_python(tree, q[i, 0], q[i, 1], cap)
            out[i, :res.size] = res
            counts[i] = res.size
        return out, counts
    _knn_batch_kernel(tree.points, tree.point, tree.axis, tree.left,
                      tree.right, tree.root, q, cap, out, counts)
    return out, counts
