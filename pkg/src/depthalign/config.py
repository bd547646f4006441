"""Pipeline configuration: a strict JSON schema with full defaults.

Unknown keys anywhere in the document are rejected, and numeric fields
are range-checked, so a typo fails fast instead of silently running with
a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .calibrate import DEFAULT_GAINS, ClassGains

PRIOR_MODES = ("gt", "degraded", "none")


class ConfigError(Exception):
    pass


@dataclass
class CameraConfig:
    fx: float = 220.0
    fy: float = 220.0
    cx: float = 128.0
    cy: float = 96.0
    width: int = 256
    height: int = 192


@dataclass
class SceneGenConfig:
    plates: int = 5
    ego_speed: float = 10.0
    sweep_duration: float = 0.1
    rays_azimuth: int = 2000
    rays_elevation: int = 64
    depth_min: float = 10.0
    depth_max: float = 32.0


@dataclass
class TrainingConfig:
    lr: float = 0.1
    iterations: int = 400
    seed: int = 0
    head_lr: float = 0.01
    head_iterations: int = 800
    sample_pixels: int = 2500
    scenes: int = 3


@dataclass
class ModelConfig:
    image_channels: int = 8
    hidden: int = 16
    se_reduction: int = 4


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    scene_path: str | None = None
    scene_gen: SceneGenConfig = field(default_factory=SceneGenConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    rot_noise_deg: float = 0.5
    trans_noise_m: float = 0.0
    tau: float = 1.0
    block_size: int = 20
    k_neighbors: int = 10
    gamma: float = 2.0
    class_gains: ClassGains = field(default_factory=ClassGains.default)
    prior_mode: str = "gt"
    fn_rate: float = 0.1
    fp_rate: float = 0.1
    jitter_px: float = 2.0
    ring_px: float = 4.0
    training: TrainingConfig = field(default_factory=TrainingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ablate_seeds: int = 5
    params_path: str | None = None


_TOP_KEYS = {
    "seed", "outDir", "scene", "sceneGen", "camera", "rotNoiseDeg",
    "transNoiseM", "tau", "blockSize", "kNeighbors", "gamma", "classGains",
    "priorMode", "fnRate", "fpRate", "jitterPx", "ringPx", "training",
    "model", "ablateSeeds", "paramsPath",
}

_SCENE_GEN_KEYS = {"plates", "egoSpeed", "sweepDuration", "raysAzimuth",
                   "raysElevation", "depthMin", "depthMax"}
_CAMERA_KEYS = {"fx", "fy", "cx", "cy", "width", "height"}
_TRAINING_KEYS = {"lr", "iterations", "seed", "headLr", "headIterations",
                  "samplePixels", "scenes"}
_MODEL_KEYS = {"imageChannels", "hidden", "seReduction"}


def _check_keys(data: dict, allowed: set, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _number(data, key, default, lo=None, hi=None, where="config",
            integer=False):
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    if integer and int(value) != value:
        raise ConfigError(f"{where}.{key} must be an integer")
    if lo is not None and value < lo:
        raise ConfigError(f"{where}.{key} must be >= {lo}")
    if hi is not None and value > hi:
        raise ConfigError(f"{where}.{key} must be <= {hi}")
    return int(value) if integer else float(value)


def parse_config(data: dict) -> PipelineConfig:
    _check_keys(data, _TOP_KEYS, "config")

    gen_data = data.get("sceneGen", {})
    _check_keys(gen_data, _SCENE_GEN_KEYS, "sceneGen")
    gen = SceneGenConfig(
        plates=_number(gen_data, "plates", 5, lo=0, where="sceneGen",
                       integer=True),
        ego_speed=_number(gen_data, "egoSpeed", 10.0, lo=0.0,
                          where="sceneGen"),
        sweep_duration=_number(gen_data, "sweepDuration", 0.1, lo=1e-6,
                               where="sceneGen"),
        rays_azimuth=_number(gen_data, "raysAzimuth", 2000, lo=1,
                             where="sceneGen", integer=True),
        rays_elevation=_number(gen_data, "raysElevation", 64, lo=1,
                               where="sceneGen", integer=True),
        depth_min=_number(gen_data, "depthMin", 10.0, lo=2.0,
                          where="sceneGen"),
        depth_max=_number(gen_data, "depthMax", 32.0, lo=2.0,
                          where="sceneGen"),
    )
    if gen.depth_max <= gen.depth_min:
        raise ConfigError("sceneGen.depthMax must exceed sceneGen.depthMin")

    cam_data = data.get("camera", {})
    _check_keys(cam_data, _CAMERA_KEYS, "camera")
    camera = CameraConfig(
        fx=_number(cam_data, "fx", 220.0, lo=1.0, where="camera"),
        fy=_number(cam_data, "fy", 220.0, lo=1.0, where="camera"),
        cx=_number(cam_data, "cx", 128.0, lo=0.0, where="camera"),
        cy=_number(cam_data, "cy", 96.0, lo=0.0, where="camera"),
        width=_number(cam_data, "width", 256, lo=8, where="camera",
                      integer=True),
        height=_number(cam_data, "height", 192, lo=8, where="camera",
                       integer=True),
    )

    train_data = data.get("training", {})
    _check_keys(train_data, _TRAINING_KEYS, "training")
    training = TrainingConfig(
        lr=_number(train_data, "lr", 0.1, lo=0.0, where="training"),
        iterations=_number(train_data, "iterations", 400, lo=0,
                           where="training", integer=True),
        seed=_number(train_data, "seed", 0, lo=0, where="training",
                     integer=True),
        head_lr=_number(train_data, "headLr", 0.01, lo=0.0,
                        where="training"),
        head_iterations=_number(train_data, "headIterations", 800, lo=0,
                                where="training", integer=True),
        sample_pixels=_number(train_data, "samplePixels", 2500, lo=1,
                              where="training", integer=True),
        scenes=_number(train_data, "scenes", 3, lo=1, where="training",
                       integer=True),
    )

    model_data = data.get("model", {})
    _check_keys(model_data, _MODEL_KEYS, "model")
    model = ModelConfig(
        image_channels=_number(model_data, "imageChannels", 8, lo=1,
                               where="model", integer=True),
        hidden=_number(model_data, "hidden", 16, lo=1, where="model",
                       integer=True),
        se_reduction=_number(model_data, "seReduction", 4, lo=1,
                             where="model", integer=True),
    )
    if model.image_channels % model.se_reduction != 0:
        raise ConfigError(
            "model.imageChannels must be divisible by model.seReduction")

    prior_mode = data.get("priorMode", "gt")
    if prior_mode not in PRIOR_MODES:
        raise ConfigError(f"priorMode must be one of {PRIOR_MODES}")

    gains_data = data.get("classGains", dict(DEFAULT_GAINS))
    try:
        gains = ClassGains.from_json(gains_data)
    except (ValueError, TypeError, AttributeError) as exc:
        raise ConfigError(f"bad classGains: {exc}") from exc

    scene_path = data.get("scene")
    if scene_path is not None and not isinstance(scene_path, str):
        raise ConfigError("scene must be a path string or null")
    params_path = data.get("paramsPath")
    if params_path is not None and not isinstance(params_path, str):
        raise ConfigError("paramsPath must be a path string or null")
    out_dir = data.get("outDir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("outDir must be a string")

    return PipelineConfig(
        seed=_number(data, "seed", 0, lo=0, integer=True),
        out_dir=out_dir,
        scene_path=scene_path,
        scene_gen=gen,
        camera=camera,
        rot_noise_deg=_number(data, "rotNoiseDeg", 0.5, lo=0.0),
        trans_noise_m=_number(data, "transNoiseM", 0.0, lo=0.0),
        tau=_number(data, "tau", 1.0, lo=1e-9),
        block_size=_number(data, "blockSize", 20, lo=2, integer=True),
        k_neighbors=_number(data, "kNeighbors", 10, lo=1, integer=True),
        gamma=_number(data, "gamma", 2.0, lo=0.0),
        class_gains=gains,
        prior_mode=prior_mode,
        fn_rate=_number(data, "fnRate", 0.1, lo=0.0, hi=1.0),
        fp_rate=_number(data, "fpRate", 0.1, lo=0.0, hi=1.0),
        jitter_px=_number(data, "jitterPx", 2.0, lo=0.0),
        ring_px=_number(data, "ringPx", 4.0, lo=1e-9),
        training=training,
        model=model,
        ablate_seeds=_number(data, "ablateSeeds", 5, lo=1, integer=True),
        params_path=params_path,
    )


def load_config(path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(data)
