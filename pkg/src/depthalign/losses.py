"""Depth supervision losses over discretized depth bins.

The supervised range [1 m, 60 m) is split into 118 bins of 0.5 m.  The
focal term penalizes low predicted probability at the target bin; the
gradient-weighted term reuses the same per-pixel values, scaled by the
local depth-discontinuity magnitude so boundary pixels dominate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import DEPTH_MAX, DEPTH_MIN

BIN_WIDTH = 0.5
NUM_BINS = int(round((DEPTH_MAX - DEPTH_MIN) / BIN_WIDTH))  # 118

# Floor applied to probabilities inside log() for numerical safety.
PROB_FLOOR = 1e-12


class OutOfRange(Exception):
    pass


class EmptyValidSet(Exception):
    pass


@dataclass
class DepthDistribution:
    """Per-pixel discrete probability vector over depth bins."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise ValueError("probs must be (H, W, num_bins)")
        self.probs = p

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def num_bins(self) -> int:
        return self.probs.shape[2]


def depth_to_bin(d: float) -> int:
    """Bin index of a depth in [1, 60); raises OutOfRange otherwise."""
    if not (DEPTH_MIN <= d < DEPTH_MAX):
        raise OutOfRange(f"depth {d} outside [{DEPTH_MIN}, {DEPTH_MAX})")
    return int((d - DEPTH_MIN) / BIN_WIDTH)


def depth_to_bin_array(depths: np.ndarray) -> np.ndarray:
    """Vectorized binning with depths clamped into the supervised range."""
    d = np.asarray(depths, dtype=np.float64)
    bins = np.floor((d - DEPTH_MIN) / BIN_WIDTH).astype(np.int64)
    return np.clip(bins, 0, NUM_BINS - 1)


def bin_center(bins) -> np.ndarray:
    return DEPTH_MIN + (np.asarray(bins, dtype=np.float64) + 0.5) * BIN_WIDTH


def _probs_of(pred) -> np.ndarray:
    return pred.probs if isinstance(pred, DepthDistribution) else np.asarray(pred)


def focal_loss(pred, target_depth, valid: np.ndarray, gamma: float = 2.0):
    """Mean focal term over valid pixels, plus the per-pixel term map.

    target_depth is a per-pixel depth map (e.g. the densified depth);
    targets are clamped into the supervised range before binning.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    probs = _probs_of(pred)
    target = np.asarray(getattr(target_depth, "depth", target_depth),
                        dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise EmptyValidSet("no valid pixels to supervise")
    bins = depth_to_bin_array(target)
    h, w = target.shape
    p_t = probs.reshape(h * w, -1)[np.arange(h * w), bins.ravel()].reshape(h, w)
    p_t = np.maximum(p_t, PROB_FLOOR)
    terms = np.zeros((h, w))
    terms[valid] = -((1.0 - p_t[valid]) ** gamma) * np.log(p_t[valid])
    total = float(np.sum(terms[valid]) / np.count_nonzero(valid))
    return total, terms


def gradient_weighted_loss(per_pixel_terms: np.ndarray, g: np.ndarray,
                           valid: np.ndarray) -> float:
    """Mean over valid pixels of g * focal term (boundary-emphasis loss)."""
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise EmptyValidSet("no valid pixels to supervise")
    weighted = np.asarray(g, dtype=np.float64)[valid] * per_pixel_terms[valid]
    return float(np.sum(weighted) / np.count_nonzero(valid))


def total_depth_loss(pred, target_depth, g: np.ndarray, valid: np.ndarray,
                     gamma: float = 2.0) -> float:
    """Focal loss plus its gradient-weighted companion."""
    focal, terms = focal_loss(pred, target_depth, valid, gamma)
    return focal + gradient_weighted_loss(terms, g, valid)


def loss_grad_wrt_probs(probs: np.ndarray, target_depth, g: np.ndarray,
                        valid: np.ndarray, gamma: float = 2.0) -> np.ndarray:
    """d(total loss)/d(probs) for training; zero at invalid pixels."""
    target = np.asarray(getattr(target_depth, "depth", target_depth),
                        dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise EmptyValidSet("no valid pixels to supervise")
    bins = depth_to_bin_array(target)
    h, w = target.shape
    flat = probs.reshape(h * w, -1)
    rows = np.arange(h * w)
    raw_p = flat[rows, bins.ravel()].reshape(h, w)
    p_t = np.maximum(raw_p, PROB_FLOOR)
    one_m = 1.0 - p_t
    # d/dp [-(1-p)^g log p] = g (1-p)^(g-1) log p - (1-p)^g / p
    # The limit as p -> 1 is 0 for g > 0 and -1/p for g = 0.
    dterm = np.zeros((h, w))
    pos = one_m > 0
    if gamma > 0:
        dterm[pos] = (gamma * one_m[pos] ** (gamma - 1.0) * np.log(p_t[pos])
                      - one_m[pos] ** gamma / p_t[pos])
    else:
        dterm = -1.0 / p_t
    # Below the probability floor the loss is constant in p.
    dterm = np.where(raw_p < PROB_FLOOR, 0.0, dterm)
    weight = (1.0 + np.asarray(g, dtype=np.float64)) / np.count_nonzero(valid)
    grad = np.zeros_like(probs)
    gv = np.zeros((h, w))
    gv[valid] = dterm[valid] * weight[valid]
    grad.reshape(h * w, -1)[rows, bins.ravel()] = gv.ravel()
    return grad
