"""Command-line entry points.

Subcommands: simulate, pipeline, train, ablate, render.  All commands are
deterministic given the config (which embeds the seed); --seed and --out
override the config values.  Exit codes: 0 success, 1 config or input
error, 2 numeric failure during training.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .calibrate import SmoothingHead
from .config import ConfigError, PipelineConfig, load_config, parse_config
from .fileio import (FileFormatError, normalize_to_gray, read_fmap,
                     read_json, write_csv, write_fmap, write_imap,
                     write_json, write_pgm)
from .losses import NUM_BINS
from .nn import DivergenceDetected, GatedDepthFusion
from .simulate import SpecError


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_boxes(path, boxes) -> None:
    write_csv(path,
              ["u_min", "v_min", "u_max", "v_max", "class_id", "is_spurious"],
              [(b.u_min, b.v_min, b.u_max, b.v_max, b.class_id,
                b.is_spurious) for b in boxes])


def _load_params(cfg: PipelineConfig):
    """Smoothing head + fusion model from the params file, or defaults
    (identity head, seeded fusion init)."""
    if cfg.params_path is None:
        head = SmoothingHead.identity()
        model = GatedDepthFusion(cfg.model.image_channels, cfg.model.hidden,
                                 seed=cfg.training.seed)
        return head, model
    data = read_json(cfg.params_path)
    return (SmoothingHead.from_json(data["smoothingHead"]),
            GatedDepthFusion.from_json(data["fusion"]))


def cmd_simulate(cfg: PipelineConfig) -> int:
    out = _out_dir(cfg)
    sim = pl.simulate_run(cfg, cfg.seed)
    write_json(out / "scene.json", sim.spec.to_json())
    np.save(out / "cloud.npy",
            np.concatenate([sim.cloud.positions,
                            sim.cloud.timestamps[:, None],
                            sim.cloud.source_ids[:, None].astype(np.float64),
                            sim.cloud.class_ids[:, None].astype(np.float64)],
                           axis=1))
    write_fmap(out / "depth_raw.fmap", sim.d_raw.depth)
    write_imap(out / "depth_raw_source.imap", sim.d_raw.source_id)
    write_fmap(out / "depth_true.fmap", sim.true_depth)
    _write_boxes(out / "boxes_gt.csv", sim.gt_boxes)
    _write_boxes(out / "boxes_prior.csv", sim.prior_boxes)
    stats = pl.boundary_stats_for(cfg, sim)
    write_csv(out / "stats.csv",
              ["misplaced_count", "total_count", "misplaced_fraction",
               "boundary_fraction", "mean_abs_error_misplaced",
               "mean_abs_error_correct"],
              [(stats.misplaced_count, stats.total_count,
                stats.misplaced_fraction, stats.boundary_fraction,
                stats.mean_abs_error_misplaced,
                stats.mean_abs_error_correct)])
    print(f"simulate: {stats.total_count} returns, "
          f"{stats.misplaced_count} misplaced "
          f"({100 * stats.misplaced_fraction:.2f}%), "
          f"boundary fraction {stats.boundary_fraction:.3f}")
    return 0


def cmd_pipeline(cfg: PipelineConfig) -> int:
    out = _out_dir(cfg)
    sim = pl.simulate_run(cfg, cfg.seed)
    head, model = _load_params(cfg)
    stages = pl.run_stages(cfg, sim, head)
    result = pl.evaluate_prediction(model, stages, sim.true_depth)

    write_fmap(out / "depth_aligned.fmap", stages.aligned.depth)
    write_fmap(out / "discrepancy.fmap", stages.delta)
    write_fmap(out / "depth_masked.fmap", stages.masked.depth)
    write_fmap(out / "depth_dense.fmap", stages.target_depth)
    write_fmap(out / "gradient_dense.fmap", stages.weights)
    write_fmap(out / "depth_predicted.fmap", result.predicted_depth)

    truth = sim.true_depth
    boxes = sim.gt_boxes
    rows = []
    for stage, sparse_map in (("raw", sim.d_raw), ("aligned", stages.aligned),
                              ("masked", stages.masked)):
        rows.append((stage, int(np.count_nonzero(sparse_map.depth)),
                     pl.sparse_mae(sparse_map, truth),
                     pl.in_box_mae(sparse_map, truth, boxes)))
    dense_valid = stages.valid
    rows.append(("dense", int(np.count_nonzero(dense_valid)),
                 pl.dense_mae(stages.target_depth, dense_valid, truth),
                 pl.dense_mae(stages.target_depth,
                              dense_valid & _box_mask(boxes, truth.shape),
                              truth)))
    support = (truth >= 1.0) & (truth < 60.0)
    rows.append(("predicted", int(np.count_nonzero(support)),
                 result.mean_abs_error,
                 pl.dense_mae(result.predicted_depth,
                              support & _box_mask(boxes, truth.shape),
                              truth)))
    write_csv(out / "metrics.csv",
              ["stage", "count", "mean_abs_error", "in_box_mean_abs_error"],
              rows)
    for stage, count, mae, in_box in rows:
        print(f"pipeline: {stage:9s} count={count:7d} mae={mae:.4f} "
              f"in_box_mae={in_box:.4f}")
    return 0


def _box_mask(boxes, shape):
    from .calibrate import box_pixel_bounds

    mask = np.zeros(shape, dtype=bool)
    h, w = shape
    for b in boxes:
        c0, c1, r0, r1 = box_pixel_bounds(b, w, h)
        if c0 <= c1 and r0 <= r1:
            mask[r0:r1 + 1, c0:c1 + 1] = True
    return mask


def cmd_train(cfg: PipelineConfig) -> int:
    out = _out_dir(cfg)
    seeds = [cfg.seed + i for i in range(cfg.training.scenes)]
    head, model, head_trace, fusion_trace, _ = pl.train_models(cfg, seeds)
    write_json(out / "params.json",
               {"smoothingHead": head.to_json(), "fusion": model.to_json()})
    rows = [("head", i, v) for i, v in enumerate(head_trace)]
    rows += [("fusion", i, v) for i, v in enumerate(fusion_trace)]
    write_csv(out / "trace.csv", ["stage", "iteration", "loss"], rows)
    if head_trace:
        print(f"train: head loss {head_trace[0]:.4f} -> {head_trace[-1]:.4f}")
    if fusion_trace:
        print(f"train: fusion loss {fusion_trace[0]:.4f} -> "
              f"{fusion_trace[-1]:.4f} "
              f"(ratio {fusion_trace[-1] / fusion_trace[0]:.3f})")
    return 0


def cmd_ablate(cfg: PipelineConfig) -> int:
    out = _out_dir(cfg)
    cells, checks = pl.run_ablation(cfg)
    write_csv(out / "ablation.csv",
              ["pgdc", "dagf", "prior", "mean_abs_depth_error",
               "bin_accuracy"],
              [(c.pgdc, c.dagf, c.prior, c.mean_abs_error, c.bin_accuracy)
               for c in cells])
    write_csv(out / "orderings.csv",
              ["property", "holds", "lhs", "rhs"],
              [(name, ok, a, b) for name, ok, a, b in checks])
    for c in cells:
        print(f"ablate: pgdc={int(c.pgdc)} dagf={int(c.dagf)} "
              f"prior={c.prior:9s} mae={c.mean_abs_error:.4f} "
              f"acc={c.bin_accuracy:.4f}")
    for name, ok, a, b in checks:
        print(f"ablate: {'PASS' if ok else 'FAIL'} {name} "
              f"({a:.4f} vs {b:.4f})")
    return 0


def cmd_render(input_path: str, output_path: str) -> int:
    values = read_fmap(input_path)
    image, vmin, vmax = normalize_to_gray(values)
    write_pgm(output_path, image)
    sidecar = Path(output_path).with_suffix(
        Path(output_path).suffix + ".minmax.txt")
    sidecar.write_text(f"{vmin!r} {vmax!r}\n", encoding="ascii")
    print(f"render: {input_path} -> {output_path} "
          f"(min={vmin!r}, max={vmax!r})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthalign",
        description="Synthetic LiDAR-camera misalignment pipeline")
    parser.add_argument("--config", help="path to a JSON config")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--out", help="override config output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "pipeline", "train", "ablate"):
        sub.add_parser(name)
    render = sub.add_parser("render")
    render.add_argument("input", help="input .fmap file")
    render.add_argument("output", help="output .pgm file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "render":
            return cmd_render(args.input, args.output)
        cfg = load_config(args.config) if args.config else parse_config({})
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "pipeline":
            return cmd_pipeline(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, SpecError, FileFormatError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceDetected as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
