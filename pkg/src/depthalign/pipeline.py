"""End-to-end orchestration: simulation, calibration, densification,
fusion training, and evaluation against ray-cast ground truth.

Everything here is deterministic given (config, seed); per-purpose RNG
streams are derived from the seed with distinct tags.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import (ClassGains, SmoothingHead, box_point_features,
                        box_pixel_bounds, calibrate_view, enhance_features,
                        se_recalibrate)
from .config import PipelineConfig
from .densify import apply_mask, assemble_features, densify, discrepancy_map
from .fileio import read_json
from .geom import (DEPTH_MAX, DEPTH_MIN, Intrinsics, SparseDepthMap,
                   perturb_extrinsics, render_sparse_depth)
from .losses import bin_center, depth_to_bin_array
from .nn import GatedDepthFusion, TrainSample, fit_smoothing_head, train
from .simulate import (SceneSpec, boundary_error_stats, build_scene,
                       camera_extrinsics, degrade_priors, ground_truth_boxes,
                       lidar_sweep, random_scene_spec, render_true_views)


@dataclass
class SimulationResult:
    spec: SceneSpec
    scene: object
    cloud: object
    t_true: object
    t_render: object
    d_raw: SparseDepthMap
    gt_boxes: list
    prior_boxes: list
    true_depth: np.ndarray
    true_class: np.ndarray
    true_source: np.ndarray


def camera_from(cfg: PipelineConfig) -> Intrinsics:
    c = cfg.camera
    return Intrinsics(c.fx, c.fy, c.cx, c.cy, c.width, c.height)


def scene_spec_for(cfg: PipelineConfig, seed: int) -> SceneSpec:
    if cfg.scene_path is not None:
        return SceneSpec.from_json(read_json(cfg.scene_path))
    g = cfg.scene_gen
    return random_scene_spec(seed, camera_from(cfg), n_plates=g.plates,
                             ego_speed=g.ego_speed,
                             sweep_duration=g.sweep_duration,
                             rays_azimuth=g.rays_azimuth,
                             rays_elevation=g.rays_elevation,
                             depth_range=(g.depth_min, g.depth_max))


def prior_boxes_for(cfg: PipelineConfig, gt_boxes: list, seed: int) -> list:
    if cfg.prior_mode == "none":
        return []
    if cfg.prior_mode == "gt":
        return list(gt_boxes)
    return degrade_priors(gt_boxes, cfg.fn_rate, cfg.fp_rate, cfg.jitter_px,
                          seed=seed, width=cfg.camera.width,
                          height=cfg.camera.height)


def simulate_run(cfg: PipelineConfig, seed: int,
                 prior_mode: str | None = None) -> SimulationResult:
    """Run one seeded scene end to end through the sensor model."""
    if prior_mode is not None:
        cfg = _with_prior_mode(cfg, prior_mode)
    k = camera_from(cfg)
    spec = scene_spec_for(cfg, seed)
    scene = build_scene(spec)
    cloud = lidar_sweep(scene, spec.ego_velocity, spec.sweep_duration,
                        spec.rays_azimuth, spec.rays_elevation, seed=seed)
    t_true = camera_extrinsics(spec.ego_velocity, spec.sweep_duration)
    t_render = perturb_extrinsics(t_true, cfg.rot_noise_deg,
                                  cfg.trans_noise_m, seed=seed)
    d_raw = render_sparse_depth(cloud, k, t_render)
    gt_boxes = ground_truth_boxes(scene, k, t_true)
    prior = prior_boxes_for(cfg, gt_boxes, seed)
    true_depth, true_class, true_source = render_true_views(scene, k, t_true)
    return SimulationResult(spec=spec, scene=scene, cloud=cloud,
                            t_true=t_true, t_render=t_render, d_raw=d_raw,
                            gt_boxes=gt_boxes, prior_boxes=prior,
                            true_depth=true_depth, true_class=true_class,
                            true_source=true_source)


def _with_prior_mode(cfg: PipelineConfig, mode: str) -> PipelineConfig:
    import copy

    clone = copy.copy(cfg)
    clone.prior_mode = mode
    return clone


def boundary_stats_for(cfg: PipelineConfig, sim: SimulationResult,
                       ring_px: float | None = None):
    return boundary_error_stats(sim.d_raw, sim.scene, camera_from(cfg),
                                sim.t_true, sim.gt_boxes,
                                ring_px if ring_px is not None else cfg.ring_px)


# Fixed class-embedding table: one row per class id (plus the background
# and no-surface rows), deterministic across runs.
_EMBED_RNG = np.random.default_rng(0xFEA7)
_EMBED_TABLE = _EMBED_RNG.uniform(-1.0, 1.0, size=(12, 8))


def image_features(true_class: np.ndarray, channels: int) -> np.ndarray:
    """Toy camera features: class embedding plus smooth spatial channels.

    Stand-in for a real image backbone; carries semantics (per-pixel class
    embedding of the visible surface) and position, but no depth.
    """
    if channels < 6:
        raise ValueError("need at least 6 image feature channels")
    h, w = true_class.shape
    emb_dim = channels - 5
    emb = _EMBED_TABLE[true_class + 2][:, :, :emb_dim]
    rows, cols = np.mgrid[0:h, 0:w]
    u = cols / max(w - 1, 1)
    v = rows / max(h - 1, 1)
    spatial = np.stack([
        u, v, np.ones((h, w)),
        np.sin(2.0 * np.pi * 3.0 * u) * np.cos(2.0 * np.pi * 2.0 * v),
        np.cos(2.0 * np.pi * 5.0 * u + 1.3 * v),
    ], axis=-1)
    return np.concatenate([emb, spatial], axis=-1)


def se_params_for(cfg: PipelineConfig):
    """Fixed squeeze-excite gate weights for the enhanced features."""
    c = cfg.model.image_channels
    hidden = c // cfg.model.se_reduction
    rng = np.random.default_rng([0x5E5E, c, hidden])
    w1 = rng.uniform(-0.5, 0.5, size=(hidden, c))
    w2 = rng.uniform(-0.5, 0.5, size=(c, hidden))
    return w1, w2


@dataclass
class StageOutputs:
    aligned: SparseDepthMap
    delta: np.ndarray
    masked: SparseDepthMap
    geo: object
    f_img: np.ndarray
    f_enhanced: np.ndarray
    f_geo: np.ndarray
    target_depth: np.ndarray
    weights: np.ndarray
    valid: np.ndarray


def run_stages(cfg: PipelineConfig, sim: SimulationResult,
               head: SmoothingHead, gains: ClassGains | None = None,
               pgdc_on: bool = True, dagf_on: bool = True) -> StageOutputs:
    """Calibration + densification producing the fusion inputs.

    With calibration disabled (or no prior boxes) the aligned map is the
    raw map; with densification disabled the geometry stream falls back to
    the sparse aligned depth with a zero gradient channel, supervised at
    its own nonzero pixels.
    """
    gains = gains or cfg.class_gains
    use_pgdc = pgdc_on and len(sim.prior_boxes) > 0
    if use_pgdc:
        aligned = calibrate_view(sim.d_raw, sim.prior_boxes, head,
                                 cfg.k_neighbors)
    else:
        aligned = sim.d_raw.copy()

    f_img = image_features(sim.true_class, cfg.model.image_channels)
    if use_pgdc:
        w1, w2 = se_params_for(cfg)
        f_enhanced = se_recalibrate(
            enhance_features(f_img, sim.prior_boxes, gains), w1, w2)
    else:
        f_enhanced = f_img

    if dagf_on:
        delta = discrepancy_map(sim.d_raw, aligned)
        masked = apply_mask(aligned, delta, cfg.tau)
        geo = densify(masked, cfg.block_size)
        f_geo = assemble_features(geo)
        target = geo.d_dense
        weights = geo.g_dense
        valid = geo.d_dense > 0
    else:
        delta = np.zeros_like(aligned.depth)
        masked = aligned
        geo = None
        # Sparse fallback: per-pixel depth plus a measurement-present flag
        # in place of the gradient channel.
        f_geo = np.stack([aligned.depth,
                          (aligned.depth > 0).astype(np.float64)], axis=-1)
        target = aligned.depth
        weights = np.zeros_like(aligned.depth)
        valid = aligned.depth > 0
    return StageOutputs(aligned=aligned, delta=delta, masked=masked, geo=geo,
                        f_img=f_img, f_enhanced=f_enhanced, f_geo=f_geo,
                        target_depth=target, weights=weights, valid=valid)


def flatten_sample(stages: StageOutputs, max_pixels: int,
                   seed: int) -> TrainSample | None:
    """Pack up to max_pixels valid pixels into a (1, N, C) training strip.

    The fusion network is pointwise, so training on a pixel subset in a
    flat layout is exact and much cheaper than full-frame passes.
    """
    rows, cols = np.nonzero(stages.valid)
    if rows.size == 0:
        return None
    if rows.size > max_pixels:
        rng = np.random.default_rng([seed, 0xF1A7])
        keep = np.sort(rng.choice(rows.size, size=max_pixels, replace=False))
        rows, cols = rows[keep], cols[keep]
    return TrainSample(
        f_img=stages.f_enhanced[rows, cols][None, :, :],
        f_geo=stages.f_geo[rows, cols][None, :, :],
        target_depth=stages.target_depth[rows, cols][None, :],
        g=stages.weights[rows, cols][None, :],
        valid=np.ones((1, rows.size), dtype=bool),
    )


def head_training_data(sims: list, k_neighbors: int):
    """(features, true depths) of all prior-box returns across runs."""
    feats, targets = [], []
    for sim in sims:
        rows, cols, f = box_point_features(sim.d_raw, sim.prior_boxes,
                                           k_neighbors)
        if rows.size == 0:
            continue
        truth = sim.true_depth[rows, cols]
        ok = truth > 0
        feats.append(f[ok])
        targets.append(truth[ok])
    if not feats:
        return np.zeros((0, 5)), np.zeros(0)
    return np.concatenate(feats), np.concatenate(targets)


def fit_head(cfg: PipelineConfig, sims: list):
    """Fit the smoothing head on prior-box returns; identity if no data."""
    feats, targets = head_training_data(sims, cfg.k_neighbors)
    if feats.shape[0] < 50 or cfg.training.head_iterations == 0:
        return SmoothingHead.identity(), []
    return fit_smoothing_head(feats, targets, cfg.training.head_lr,
                              cfg.training.head_iterations)


def fit_fusion(cfg: PipelineConfig, samples: list):
    model = GatedDepthFusion(cfg.model.image_channels, cfg.model.hidden,
                             seed=cfg.training.seed)
    if not samples or cfg.training.iterations == 0:
        return model, []
    return train(model, samples, cfg.training.lr, cfg.training.iterations,
                 cfg.gamma)


@dataclass
class EvalResult:
    mean_abs_error: float
    bin_accuracy: float
    predicted_depth: np.ndarray


def evaluate_prediction(model: GatedDepthFusion, stages: StageOutputs,
                        true_depth: np.ndarray,
                        support: np.ndarray | None = None) -> EvalResult:
    """Score the fused depth prediction against ray-cast truth.

    The default support is every pixel whose true depth lies in the
    supervised range; a narrower mask (e.g. object pixels) may be given.
    Either way the support depends only on the scene, so scores are
    comparable across module configurations.
    """
    probs = model.forward(stages.f_enhanced, stages.f_geo, training=False)
    bins = np.argmax(probs, axis=-1)
    predicted = bin_center(bins)
    in_range = (true_depth >= DEPTH_MIN) & (true_depth < DEPTH_MAX)
    support = in_range if support is None else (support & in_range)
    if not support.any():
        return EvalResult(0.0, 0.0, predicted)
    true_bins = depth_to_bin_array(true_depth)
    mae = float(np.mean(np.abs(predicted[support] - true_depth[support])))
    acc = float(np.mean(bins[support] == true_bins[support]))
    return EvalResult(mae, acc, predicted)


def object_support(sim: SimulationResult) -> np.ndarray:
    """Pixels whose true surface is a foreground object.

    The detection-relevant evaluation support: depth quality on objects is
    what drives the downstream detector.
    """
    return (sim.true_source >= 0) & (sim.true_source < sim.scene.n_foreground)


def in_box_mae(depth_map: SparseDepthMap, true_depth: np.ndarray,
               boxes: list, support: np.ndarray | None = None) -> float:
    """Mean |depth - truth| over in-box pixels with a return and truth.

    An explicit support mask restricts the comparison (used to hold the
    pixel set fixed when comparing maps before/after calibration).
    """
    h, w = depth_map.depth.shape
    mask = np.zeros((h, w), dtype=bool)
    for box in boxes:
        c0, c1, r0, r1 = box_pixel_bounds(box, w, h)
        if c0 <= c1 and r0 <= r1:
            mask[r0:r1 + 1, c0:c1 + 1] = True
    mask &= (depth_map.depth > 0) & (true_depth > 0)
    if support is not None:
        mask &= support
    if not mask.any():
        return 0.0
    return float(np.mean(np.abs(depth_map.depth[mask] - true_depth[mask])))


def sparse_mae(depth_map: SparseDepthMap, true_depth: np.ndarray) -> float:
    mask = (depth_map.depth > 0) & (true_depth > 0)
    if not mask.any():
        return 0.0
    return float(np.mean(np.abs(depth_map.depth[mask] - true_depth[mask])))


def dense_mae(values: np.ndarray, valid: np.ndarray,
              true_depth: np.ndarray) -> float:
    mask = valid & (true_depth > 0)
    if not mask.any():
        return 0.0
    return float(np.mean(np.abs(values[mask] - true_depth[mask])))


@dataclass
class AblationCell:
    pgdc: bool
    dagf: bool
    prior: str
    mean_abs_error: float
    bin_accuracy: float


def _effective_key(pgdc: bool, dagf: bool, prior: str):
    use_pgdc = pgdc and prior != "none"
    return (use_pgdc, dagf, prior if use_pgdc else "none")


def run_ablation(cfg: PipelineConfig):
    """Grid over module toggles and prior quality.

    Mirrors how detector ablations are run: each effective cell trains
    ONE fusion model on data pooled across all seeds, then the reported
    numbers are the per-seed evaluation scores averaged over seeds.
    Cells that reduce to the same effective pipeline (priors only matter
    while calibration is on) are computed once.  Returns (cells, checks)
    where checks lists the ordering properties with their outcomes.
    """
    seeds = [cfg.seed + i for i in range(cfg.ablate_seeds)]
    priors = ("none", "degraded", "gt")
    toggles = [(False, False), (True, False), (False, True), (True, True)]

    sims = {prior: [simulate_run(cfg, s, prior_mode=prior) for s in seeds]
            for prior in priors}
    heads = {"none": SmoothingHead.identity()}

    unique_keys = sorted({_effective_key(pgdc, dagf, prior)
                          for pgdc, dagf in toggles for prior in priors})
    cell_scores: dict = {}
    for key in unique_keys:
        use_pgdc, use_dagf, eff_prior = key
        if eff_prior not in heads:
            heads[eff_prior] = fit_head(cfg, sims[eff_prior])[0]
        head = heads[eff_prior]
        per_seed_stages = []
        samples = []
        for sim, seed in zip(sims[eff_prior], seeds):
            stages = run_stages(cfg, sim, head, pgdc_on=use_pgdc,
                                dagf_on=use_dagf)
            per_seed_stages.append(stages)
            sample = flatten_sample(stages, cfg.training.sample_pixels, seed)
            if sample is not None:
                samples.append(sample)
        model, _ = fit_fusion(cfg, samples)
        maes, accs = [], []
        for sim, stages in zip(sims[eff_prior], per_seed_stages):
            result = evaluate_prediction(model, stages, sim.true_depth)
            maes.append(result.mean_abs_error)
            accs.append(result.bin_accuracy)
        cell_scores[key] = (float(np.mean(maes)), float(np.mean(accs)))

    cells = []
    for pgdc, dagf in toggles:
        for prior in priors:
            mae, acc = cell_scores[_effective_key(pgdc, dagf, prior)]
            cells.append(AblationCell(pgdc=pgdc, dagf=dagf, prior=prior,
                                      mean_abs_error=mae, bin_accuracy=acc))

    def mae_of(pgdc, dagf, prior):
        for c in cells:
            if (c.pgdc, c.dagf, c.prior) == (pgdc, dagf, prior):
                return c.mean_abs_error
        raise KeyError((pgdc, dagf, prior))

    full = mae_of(True, True, "gt")
    pgdc_only = mae_of(True, False, "gt")
    dagf_only = mae_of(False, True, "gt")
    baseline = mae_of(False, False, "gt")
    gt = mae_of(True, True, "gt")
    degraded = mae_of(True, True, "degraded")
    none = mae_of(True, True, "none")
    checks = [
        ("full<=pgdc_only", full <= pgdc_only, full, pgdc_only),
        ("full<=dagf_only", full <= dagf_only, full, dagf_only),
        ("pgdc_only<=baseline", pgdc_only <= baseline, pgdc_only, baseline),
        ("dagf_only<=baseline", dagf_only <= baseline, dagf_only, baseline),
        ("gt<=degraded", gt <= degraded, gt, degraded),
        ("degraded<=none", degraded <= none, degraded, none),
    ]
    return cells, checks


def train_models(cfg: PipelineConfig, seeds: list):
    """Fit the smoothing head, then the fusion network, on seeded scenes.

    Returns (head, fusion model, head trace, fusion trace, sims).
    """
    sims = [simulate_run(cfg, s) for s in seeds]
    head, head_trace = fit_head(cfg, sims)
    samples = []
    for sim, seed in zip(sims, seeds):
        stages = run_stages(cfg, sim, head)
        sample = flatten_sample(stages, cfg.training.sample_pixels, seed)
        if sample is not None:
            samples.append(sample)
    model, fusion_trace = fit_fusion(cfg, samples)
    return head, model, head_trace, fusion_trace, sims
