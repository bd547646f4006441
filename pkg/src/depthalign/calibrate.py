"""Prior-guided calibration of projected depths and box-targeted feature
enhancement.

Inside each 2D prior box, every depth return is smoothed from a 5-channel
feature built from itself and its four critical neighbors (the two
smallest-depth and two largest-depth members of its nearest-neighbor
set), passed through a 1x1 conv + batch norm + ReLU head.  Image features
inside boxes are amplified with class-specific gains and recalibrated
channel-wise by a squeeze-excite gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import DEPTH_MAX, DEPTH_MIN, SparseDepthMap
from .kdtree import KdTree2D, build_kdtree, knn, knn_batch

# Neighbor search count for the smoothing feature.
NEIGHBOR_COUNT = 10

# A box needs the point itself plus four critical neighbors to smooth.
MIN_POINTS_PER_BOX = 5

BN_EPS = 1e-5

# The ten foreground classes, ordered; class ids index this tuple.
CLASSES = ("car", "truck", "construction_vehicle", "bus", "trailer",
           "barrier", "motorcycle", "bicycle", "pedestrian", "traffic_cone")

# Default per-class feature gains: smaller object classes get the larger
# boost so they are not washed out downstream.
DEFAULT_GAINS = {
    "car": 1.2,
    "truck": 1.1,
    "construction_vehicle": 1.1,
    "bus": 1.1,
    "trailer": 1.1,
    "barrier": 1.3,
    "motorcycle": 1.3,
    "bicycle": 1.5,
    "pedestrian": 1.5,
    "traffic_cone": 1.5,
}


class TooFewNeighbors(Exception):
    pass


class UnknownClass(Exception):
    pass


class ShapeMismatch(Exception):
    pass


@dataclass
class SmoothingHead:
    """1x1 conv + single-channel batch norm + ReLU, in inference form."""

    weights: np.ndarray
    bias: float
    bn_gamma: float
    bn_beta: float
    bn_mean: float
    bn_var: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(5)
        if self.bn_var <= 0:
            raise ValueError("bn_var must be positive")

    @classmethod
    def identity(cls) -> "SmoothingHead":
        """Head whose output equals the input depth (no correction)."""
        return cls(weights=np.array([1.0, 0.0, 0.0, 0.0, 0.0]), bias=0.0,
                   bn_gamma=1.0, bn_beta=0.0, bn_mean=0.0, bn_var=1.0 - BN_EPS)

    def apply(self, features: np.ndarray) -> np.ndarray:
        """Smoothed depths for an (n, 5) feature batch."""
        f = np.asarray(features, dtype=np.float64)
        pre = f @ self.weights + self.bias
        norm = (self.bn_gamma * (pre - self.bn_mean)
                / np.sqrt(self.bn_var + BN_EPS) + self.bn_beta)
        return np.maximum(norm, 0.0)

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias,
                "bnGamma": self.bn_gamma, "bnBeta": self.bn_beta,
                "bnMean": self.bn_mean, "bnVar": self.bn_var}

    @classmethod
    def from_json(cls, data: dict) -> "SmoothingHead":
        return cls(weights=np.asarray(data["weights"]), bias=data["bias"],
                   bn_gamma=data["bnGamma"], bn_beta=data["bnBeta"],
                   bn_mean=data["bnMean"], bn_var=data["bnVar"])


@dataclass
class ClassGains:
    """Per-class multiplicative feature gains, all >= 1."""

    gains: dict

    def __post_init__(self):
        missing = [c for c in CLASSES if c not in self.gains]
        if missing:
            raise ValueError(f"missing gain entries: {missing}")
        for name, value in self.gains.items():
            if value < 1.0:
                raise ValueError(f"gain for {name} must be >= 1")

    @classmethod
    def default(cls) -> "ClassGains":
        return cls(dict(DEFAULT_GAINS))

    def for_class(self, class_id: int) -> float:
        if not (0 <= class_id < len(CLASSES)):
            raise UnknownClass(f"class id {class_id}")
        return float(self.gains[CLASSES[class_id]])

    def to_json(self) -> dict:
        return dict(self.gains)

    @classmethod
    def from_json(cls, data: dict) -> "ClassGains":
        return cls({str(k): float(v) for k, v in data.items()})


def critical_neighbors(neighbor_depths) -> np.ndarray:
    """The two smallest and two largest depths of a neighbor set.

    Output order is ascending; sorting is stable so equal depths keep
    their input order.
    """
    depths = np.asarray(neighbor_depths, dtype=np.float64)
    if depths.size < 4:
        raise TooFewNeighbors(f"need >= 4 neighbor depths, got {depths.size}")
    s = np.sort(depths, kind="stable")
    return np.array([s[0], s[1], s[-2], s[-1]])


def smooth_point(d_p: float, critical: np.ndarray, head: SmoothingHead) -> float:
    """Smoothed depth of one point from its 5-channel feature."""
    feature = np.concatenate([[d_p], np.asarray(critical, dtype=np.float64)])
    return float(head.apply(feature[None, :])[0])


def box_pixel_bounds(box, width: int, height: int):
    """Integer pixel bounds (col_lo, col_hi, row_lo, row_hi), inclusive,
    of a real-valued box clipped to the image."""
    col_lo = max(int(np.floor(box.u_min + 0.5)), 0)
    col_hi = min(int(np.floor(box.u_max + 0.5)), width - 1)
    row_lo = max(int(np.floor(box.v_min + 0.5)), 0)
    row_hi = min(int(np.floor(box.v_max + 0.5)), height - 1)
    return col_lo, col_hi, row_lo, row_hi


def _box_features(depth: np.ndarray, box, k_neighbors: int):
    """Smoothing features of the returns inside one box.

    Returns (rows, cols, features) in row-major point order, or None when
    the box holds fewer than five returns.  The row-major point index
    doubles as the neighbor-search tie-breaking index.
    """
    height, width = depth.shape
    col_lo, col_hi, row_lo, row_hi = box_pixel_bounds(box, width, height)
    if col_lo > col_hi or row_lo > row_hi:
        return None
    tile = depth[row_lo:row_hi + 1, col_lo:col_hi + 1]
    rows, cols = np.nonzero(tile)
    if rows.size < MIN_POINTS_PER_BOX:
        return None
    depths = tile[rows, cols].copy()
    coords = np.stack([cols + col_lo, rows + row_lo], axis=1)
    tree = build_kdtree(coords)
    neighbors, counts = knn_batch(tree, coords, k_neighbors)
    features = np.empty((rows.size, 5))
    features[:, 0] = depths
    for i in range(rows.size):
        features[i, 1:] = critical_neighbors(depths[neighbors[i, :counts[i]]])
    return rows + row_lo, cols + col_lo, features


def box_point_features(d_raw: SparseDepthMap, boxes,
                       k_neighbors: int = NEIGHBOR_COUNT):
    """Smoothing features of all in-box returns, without updating the map.

    Concatenated over boxes in list order (overlapping boxes contribute
    their points repeatedly, matching what calibration would smooth).
    Returns (rows, cols, features).
    """
    all_rows, all_cols, all_feats = [], [], []
    for box in boxes:
        got = _box_features(d_raw.depth, box, k_neighbors)
        if got is None:
            continue
        rows, cols, feats = got
        all_rows.append(rows)
        all_cols.append(cols)
        all_feats.append(feats)
    if not all_rows:
        return (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros((0, 5)))
    return (np.concatenate(all_rows), np.concatenate(all_cols),
            np.concatenate(all_feats))


def calibrate_view(d_raw: SparseDepthMap, boxes, head: SmoothingHead,
                   k_neighbors: int = NEIGHBOR_COUNT) -> SparseDepthMap:
    """Smooth the depth returns inside each prior box.

    Boxes are processed in list order; later boxes see depths already
    updated by earlier ones.  Within one box all smoothed values are
    computed from the box's snapshot before any of them is written.
    Boxes holding fewer than five returns are left untouched.  Pixels
    outside every box are copied unchanged.  Positive smoothed values are
    clipped into the supervised depth range; non-positive ones clear the
    pixel.
    """
    out = d_raw.copy()
    depth = out.depth
    for box in boxes:
        got = _box_features(depth, box, k_neighbors)
        if got is None:
            continue
        rows, cols, features = got
        smoothed = head.apply(features)
        smoothed = np.where(smoothed > 0,
                            np.clip(smoothed, DEPTH_MIN, DEPTH_MAX), 0.0)
        depth[rows, cols] = smoothed
    return out


def enhance_features(fmap: np.ndarray, boxes, gains: ClassGains) -> np.ndarray:
    """Scale features inside each box by its class gain, all channels.

    Overlapping boxes multiply cumulatively in list order; pixels outside
    every box are unchanged.
    """
    out = np.array(fmap, dtype=np.float64, copy=True)
    if out.ndim != 3:
        raise ShapeMismatch("feature map must be (H, W, C)")
    height, width = out.shape[:2]
    for box in boxes:
        gain = gains.for_class(box.class_id)
        col_lo, col_hi, row_lo, row_hi = box_pixel_bounds(box, width, height)
        if col_lo > col_hi or row_lo > row_hi:
            continue
        out[row_lo:row_hi + 1, col_lo:col_hi + 1, :] *= gain
    return out


def se_recalibrate(fmap: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Squeeze-excite channel recalibration.

    s = sigmoid(w2 @ relu(w1 @ mean_over_pixels(fmap))); every output
    channel is the input scaled by its s entry, which lies in (0, 1).
    """
    f = np.asarray(fmap, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if f.ndim != 3:
        raise ShapeMismatch("feature map must be (H, W, C)")
    c = f.shape[2]
    if w1.ndim != 2 or w1.shape[1] != c or w2.shape != (c, w1.shape[0]):
        raise ShapeMismatch(
            f"need w1 (C/r, C) and w2 (C, C/r) for C={c}, "
            f"got {w1.shape} and {w2.shape}")
    if c % w1.shape[0] != 0:
        raise ShapeMismatch(
            f"channel count {c} not divisible by reduction width {w1.shape[0]}")
    pooled = f.mean(axis=(0, 1))
    s = 1.0 / (1.0 + np.exp(-(w2 @ np.maximum(w1 @ pooled, 0.0))))
    return f * s
