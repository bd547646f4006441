"""Discrepancy masking, block densification, and block gradient extraction.

Turns a raw/calibrated sparse depth map pair into a dense, piecewise
constant (block-wise) depth map plus a matching depth-discontinuity
magnitude map, stacked as a 2-channel feature map for the fusion network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import DEPTH_MAX, DEPTH_MIN, SparseDepthMap

# Depth-difference magnitudes are capped at the span of the supervised
# depth range so they stay usable as loss weights.
GRADIENT_CAP = DEPTH_MAX - DEPTH_MIN

# Each point's discontinuity is measured against its nearest valid
# in-block points, at most this many.
NEIGHBORS_PER_POINT = 8


class DimensionMismatch(Exception):
    pass


@dataclass
class DenseGeometry:
    """Block-broadcast depth and gradient maps.

    `d_dense` and `g_dense` are constant within each block; blocks without
    any valid measurement are flagged invalid and carry zeros.
    """

    d_dense: np.ndarray
    g_dense: np.ndarray
    block_valid: np.ndarray
    block_size: int


def discrepancy_map(d_raw: SparseDepthMap, d_aligned: SparseDepthMap) -> np.ndarray:
    """Per-pixel |raw - aligned|; 0 where either map has no measurement."""
    if d_raw.depth.shape != d_aligned.depth.shape:
        raise DimensionMismatch(
            f"{d_raw.depth.shape} vs {d_aligned.depth.shape}")
    both = (d_raw.depth != 0) & (d_aligned.depth != 0)
    delta = np.zeros_like(d_raw.depth)
    delta[both] = np.abs(d_raw.depth[both] - d_aligned.depth[both])
    return delta


def apply_mask(d_aligned: SparseDepthMap, delta: np.ndarray,
               tau: float) -> SparseDepthMap:
    """Keep aligned depths whose discrepancy is <= tau, zero the rest."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if delta.shape != d_aligned.depth.shape:
        raise DimensionMismatch(f"{delta.shape} vs {d_aligned.depth.shape}")
    keep = delta <= tau
    depth = np.where(keep, d_aligned.depth, 0.0)
    sid = None
    if d_aligned.source_id is not None:
        sid = np.where(keep & (depth != 0), d_aligned.source_id, -1).astype(np.int32)
    return SparseDepthMap(depth, sid)


def _block_grid(height: int, width: int, block_size: int):
    bh = -(-height // block_size)
    bw = -(-width // block_size)
    return bh, bw


def _point_gradients(rows, cols, depths):
    """Max |d_i - d_j| over each point's nearest-neighbor set.

    Neighbor sets are the min(8, n-1) nearest valid points by pixel
    distance, distance ties broken by lower (row-major) point index.
    """
    n = depths.size
    if n == 1:
        return np.zeros(1)
    dr = rows[:, None] - rows[None, :]
    dc = cols[:, None] - cols[None, :]
    d2 = (dr * dr + dc * dc).astype(np.float64)
    np.fill_diagonal(d2, np.inf)
    k = min(NEIGHBORS_PER_POINT, n - 1)
    grads = np.empty(n)
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, d2[i]))[:k]
        grads[i] = np.max(np.abs(depths[i] - depths[order]))
    return grads


def block_stats(m: SparseDepthMap, block_size: int):
    """Per-block (mean depth, max local discontinuity, validity).

    Blocks partition the image into block_size x block_size tiles; tiles
    at the right/bottom edge use their actual extent.  A block with no
    valid (nonzero) pixel reports (0, 0, invalid); a single valid pixel
    gives (depth, 0, valid).
    """
    if block_size < 2:
        raise ValueError("block_size must be >= 2")
    h, w = m.depth.shape
    bh, bw = _block_grid(h, w, block_size)
    d_avg = np.zeros((bh, bw))
    g_max = np.zeros((bh, bw))
    valid = np.zeros((bh, bw), dtype=bool)
    for bi in range(bh):
        for bj in range(bw):
            tile = m.depth[bi * block_size:(bi + 1) * block_size,
                           bj * block_size:(bj + 1) * block_size]
            rows, cols = np.nonzero(tile)
            if rows.size == 0:
                continue
            depths = tile[rows, cols]
            valid[bi, bj] = True
            d_avg[bi, bj] = np.sum(depths) / depths.size
            g_max[bi, bj] = min(np.max(_point_gradients(rows, cols, depths)),
                                GRADIENT_CAP)
    return d_avg, g_max, valid


def densify(m: SparseDepthMap, block_size: int) -> DenseGeometry:
    """Broadcast block statistics to every pixel of their block."""
    d_avg, g_max, valid = block_stats(m, block_size)
    h, w = m.depth.shape
    d_dense = np.repeat(np.repeat(d_avg, block_size, axis=0),
                        block_size, axis=1)[:h, :w]
    g_dense = np.repeat(np.repeat(g_max, block_size, axis=0),
                        block_size, axis=1)[:h, :w]
    return DenseGeometry(d_dense, g_dense, valid, block_size)


def assemble_features(geo: DenseGeometry) -> np.ndarray:
    """Stack the dense depth and gradient maps into an (H, W, 2) feature map."""
    return np.stack([geo.d_dense, geo.g_dense], axis=-1)
