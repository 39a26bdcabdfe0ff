#!/usr/bin/env python3
"""
Session configuration: one JSON document with inputs, cameras and pipeline
hyperparameters.

    {
      "inputs":   {"source_cloud": "...g4dc", "edited_cloud": "...g4dc", "deformation": "...g4df"},
      "cameras":  [{"model": "pinhole", "rotation": [[...]], "translation": [...], ...}],
      "pipeline": {"k": 2, "n_rays": 300000, ...}
    }

Relative input paths resolve against the config file's directory. Defaults
live in PIPELINE_DEFAULTS; precedence is defaults < JSON < explicit overrides
(CLI flags).
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from functions.errors import ConfigError
from functions.scene_model import (
    Camera,
    EditSession,
    load_cloud,
    load_deformation,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

PIPELINE_DEFAULTS = {
    "k": 2,
    "n_rays": 300000,
    "gamma": 0.05,
    "lambda0": 0.1,
    "lambda1": 1.0,
    "lambda2": 1.0,
    "sinkhorn_tol": 1e-8,
    "sinkhorn_max_iters": 2000,
    "epsilon": 1.0,
    "eta": 0.2,
    "zeta": 0.3,
    "step_size": 0.01,
    "momentum": 0.9,
    "refine_iters": 200,
    "max_pairs_per_epoch": 64,
    "ndd_k": 5,
    "guidance": "anchor",
    "freeze_unedited": False,
    "seed": 0,
}

GUIDANCE_MODES = ("anchor", "nearest")
STAGES = ("anchors", "match", "propagate", "refine", "render")


def configure_logging(default: str = "INFO") -> int:
    """basicConfig with the level taken from G4D_LOG."""
    name = os.environ.get("G4D_LOG", default).upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    return level


def derive_seed(seed: int, stage: str) -> int:
    """Stable per-stage sub-seed: first 8 bytes of sha256("{seed}:{stage}")."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class AnchorConfig:
    k: int = 2
    n_rays: int = 300000

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.n_rays < 1:
            raise ConfigError(f"n_rays must be >= 1, got {self.n_rays}")


@dataclass(frozen=True)
class SinkhornConfig:
    lambda0: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    gamma: float = 0.05
    max_iters: int = 2000
    tol: float = 1e-8

    def __post_init__(self):
        for name in ("lambda0", "lambda1", "lambda2", "gamma", "tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class RefineConfig:
    epsilon: float = 1.0
    eta: float = 0.2
    zeta: float = 0.3
    step_size: float = 0.01
    momentum: float = 0.9
    iterations: int = 200
    max_pairs_per_epoch: int = 64
    freeze_unedited: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.5 <= self.epsilon <= 2.0:
            logger.warning(f"epsilon={self.epsilon} is outside the usual [0.5, 2.0] range")
        for name in ("eta", "zeta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if not self.step_size > 0:
            raise ConfigError(f"step_size must be > 0, got {self.step_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.iterations < 0:
            raise ConfigError(f"refine_iters must be >= 0, got {self.iterations}")
        if self.max_pairs_per_epoch < 1:
            raise ConfigError(f"max_pairs_per_epoch must be >= 1, got {self.max_pairs_per_epoch}")


FLAG_WORDS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def parse_flag(key: str, value) -> bool:
    """Booleans pass through; 0/1 and the usual words are accepted; anything else is rejected."""
    if isinstance(value, bool):
        return value
    if isinstance(value, int) and value in (0, 1):
        return bool(value)
    if isinstance(value, str) and value.strip().lower() in FLAG_WORDS:
        return FLAG_WORDS[value.strip().lower()]
    raise ConfigError(f"{key} must be a boolean, got {value!r}")


@dataclass(frozen=True)
class PipelineConfig:
    anchor: AnchorConfig = field(default_factory=AnchorConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    ndd_k: int = 5
    guidance: str = "anchor"
    seed: int = 0

    def __post_init__(self):
        if self.guidance not in GUIDANCE_MODES:
            raise ConfigError(f"guidance must be one of {GUIDANCE_MODES}, got {self.guidance!r}")
        if self.ndd_k < 1:
            raise ConfigError(f"ndd_k must be >= 1, got {self.ndd_k}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @classmethod
    def from_dict(cls, block: Optional[Dict] = None, **overrides) -> "PipelineConfig":
        values = dict(PIPELINE_DEFAULTS)
        block = block or {}
        unknown = sorted(set(block) - set(PIPELINE_DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown pipeline keys: {', '.join(unknown)}")
        values.update(block)
        values.update({key: value for key, value in overrides.items() if value is not None})
        try:
            return cls(
                anchor=AnchorConfig(k=int(values["k"]), n_rays=int(values["n_rays"])),
                sinkhorn=SinkhornConfig(
                    lambda0=float(values["lambda0"]), lambda1=float(values["lambda1"]),
                    lambda2=float(values["lambda2"]), gamma=float(values["gamma"]),
                    max_iters=int(values["sinkhorn_max_iters"]), tol=float(values["sinkhorn_tol"]),
                ),
                refine=RefineConfig(
                    epsilon=float(values["epsilon"]), eta=float(values["eta"]),
                    zeta=float(values["zeta"]), step_size=float(values["step_size"]),
                    momentum=float(values["momentum"]), iterations=int(values["refine_iters"]),
                    max_pairs_per_epoch=int(values["max_pairs_per_epoch"]),
                    freeze_unedited=parse_flag("freeze_unedited", values["freeze_unedited"]),
                ),
                ndd_k=int(values["ndd_k"]),
                guidance=str(values["guidance"]),
                seed=int(values["seed"]),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid pipeline value: {e}") from e

    def to_dict(self) -> Dict:
        """Flat echo using the JSON key names."""
        return {
            "k": self.anchor.k,
            "n_rays": self.anchor.n_rays,
            "gamma": self.sinkhorn.gamma,
            "lambda0": self.sinkhorn.lambda0,
            "lambda1": self.sinkhorn.lambda1,
            "lambda2": self.sinkhorn.lambda2,
            "sinkhorn_tol": self.sinkhorn.tol,
            "sinkhorn_max_iters": self.sinkhorn.max_iters,
            "epsilon": self.refine.epsilon,
            "eta": self.refine.eta,
            "zeta": self.refine.zeta,
            "step_size": self.refine.step_size,
            "momentum": self.refine.momentum,
            "refine_iters": self.refine.iterations,
            "max_pairs_per_epoch": self.refine.max_pairs_per_epoch,
            "ndd_k": self.ndd_k,
            "guidance": self.guidance,
            "freeze_unedited": self.refine.freeze_unedited,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SessionPaths:
    config_path: Path
    source_cloud: Path
    edited_cloud: Path
    deformation: Path


def read_config(path) -> Dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(document) - {"inputs", "cameras", "pipeline", "description"})
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys: {', '.join(unknown)}")
    return document


def resolve_inputs(document: Dict, config_path) -> SessionPaths:
    config_path = Path(config_path)
    inputs = document.get("inputs") or {}
    missing = [key for key in ("source_cloud", "edited_cloud", "deformation") if key not in inputs]
    if missing:
        raise ConfigError(f"{config_path}: inputs block missing {', '.join(missing)}")
    base = config_path.parent

    def resolve(value: str) -> Path:
        candidate = Path(value)
        return candidate if candidate.is_absolute() else base / candidate

    return SessionPaths(config_path, resolve(inputs["source_cloud"]),
                        resolve(inputs["edited_cloud"]), resolve(inputs["deformation"]))


def parse_cameras(document: Dict) -> List[Camera]:
    entries = document.get("cameras")
    if not entries:
        raise ConfigError("config must list at least one camera")
    return [Camera.from_dict(entry) for entry in entries]


def load_pipeline_config(path, **overrides) -> PipelineConfig:
    return PipelineConfig.from_dict(read_config(path).get("pipeline"), **overrides)


def load_session(path, **overrides) -> EditSession:
    """Read the config, every referenced file, and build a validated EditSession."""
    document = read_config(path)
    paths = resolve_inputs(document, path)
    config = PipelineConfig.from_dict(document.get("pipeline"), **overrides)
    cameras = parse_cameras(document)
    source = load_cloud(paths.source_cloud)
    edited = load_cloud(paths.edited_cloud)
    deformation = load_deformation(paths.deformation)
    logger.info(f"Session: {len(source)} source / {len(edited)} edited Gaussians, "
                f"{deformation.n_frames} frames, {len(cameras)} cameras")
    return EditSession(source, edited, deformation, cameras, config)


def write_config(path, source_cloud: str, edited_cloud: str, deformation: str,
                 cameras: List[Camera], pipeline: Optional[Dict] = None,
                 description: str = None) -> Path:
    """Write a config document (used by the scene generator)."""
    path = Path(path)
    document = {
        "inputs": {"source_cloud": source_cloud, "edited_cloud": edited_cloud, "deformation": deformation},
        "cameras": [camera.to_dict() for camera in cameras],
        "pipeline": dict(pipeline or {}),
    }
    if description:
        document["description"] = description
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True))
    return path


def defaults_table() -> List[Dict]:
    """Rows for documentation: key, default, group."""
    groups = {
        "k": "anchors", "n_rays": "anchors",
        "gamma": "match", "lambda0": "match", "lambda1": "match", "lambda2": "match",
        "sinkhorn_tol": "match", "sinkhorn_max_iters": "match",
        "guidance": "propagate", "ndd_k": "propagate",
        "epsilon": "refine", "eta": "refine", "zeta": "refine", "step_size": "refine",
        "momentum": "refine", "refine_iters": "refine", "max_pairs_per_epoch": "refine",
        "freeze_unedited": "refine", "seed": "all",
    }
    return [{"key": key, "default": value, "stage": groups[key]} for key, value in PIPELINE_DEFAULTS.items()]
