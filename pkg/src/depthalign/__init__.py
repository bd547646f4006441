"""Desk-scale LiDAR-camera alignment pipeline.

Simulates the depth-dependent projection errors caused by extrinsic
calibration noise and the LiDAR rolling shutter, then corrects them with
prior-box-guided depth smoothing, discrepancy masking with block
densification, and a toy gated fusion network predicting per-pixel depth
bin distributions.
"""

__version__ = "0.1.0"
