#!/usr/bin/env python3
"""
Generate deterministic oracle scenes in the standard file formats.

Writes source.g4dc, edited.g4dc, deformation.g4df and config.json into the
output directory; the config can be passed straight to `g4d.py run`.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.config import PIPELINE_DEFAULTS, configure_logging
from functions.errors import ConfigError
from functions.synthetic_oracle import OracleScene, make_occlusion_scene, make_rigid_scene

configure_logging()
logger = logging.getLogger(__name__)

# Configuration
SCENES = ("rigid", "occlusion")


def parse_overrides(items: List[str]) -> Dict:
    """key=value pairs for the pipeline block; values are parsed as JSON when possible."""
    pipeline = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in PIPELINE_DEFAULTS:
            raise ConfigError(f"unknown pipeline key {key!r}")
        try:
            pipeline[key] = json.loads(raw)
        except json.JSONDecodeError:
            pipeline[key] = raw
    return pipeline


def build_scene(args) -> OracleScene:
    if args.scene == "rigid":
        return make_rigid_scene(n_gaussians=args.n_gaussians, axis=tuple(args.axis), omega=args.omega,
                                n_frames=args.frames, seed=args.seed, clone=args.clone,
                                sh_degree=args.sh_degree, width=args.size, height=args.size,
                                identity=args.identity)
    return make_occlusion_scene(seed=args.seed, width=args.size, height=args.size, n_views=args.views,
                                n_frames=args.frames)


def add_arguments(parser: argparse.ArgumentParser):
    # Scene selection
    parser.add_argument('--scene', choices=SCENES, default='rigid',
                        help='Scene to generate (default: rigid)')
    parser.add_argument('--out', type=str, required=True,
                        help='Directory for the scene files and config.json')
    parser.add_argument('--seed', type=int, default=0,
                        help='Scene seed (default: 0)')
    parser.add_argument('--frames', type=int,
                        help='Number of frames (default: 5 rigid, 10 occlusion)')
    parser.add_argument('--size', type=int,
                        help='Image width and height (default: 64 rigid, 128 occlusion)')

    # Rigid scene parameters
    parser.add_argument('--n-gaussians', type=int, default=200,
                        help='Source Gaussians in the rigid scene (default: 200)')
    parser.add_argument('--axis', type=float, nargs=3, default=[0.0, 0.0, 1.0],
                        help='Rotation axis (default: 0 0 1)')
    parser.add_argument('--omega', type=float, default=0.1,
                        help='Rotation per frame in radians (default: 0.1)')
    parser.add_argument('--clone', action='store_true',
                        help='Append jittered clones of 10%% of the Gaussians to the edit')
    parser.add_argument('--identity', action='store_true',
                        help='Edited cloud equals the source (self-propagation check)')
    parser.add_argument('--sh-degree', type=int, default=0, choices=[0, 1, 2, 3],
                        help='SH degree of the rigid scene (default: 0)')

    # Occlusion scene parameters
    parser.add_argument('--views', type=int, default=8,
                        help='Cameras in the occlusion scene (default: 8)')

    # Pipeline block written into config.json
    parser.add_argument('--set', action='append', metavar='KEY=VALUE',
                        help='Pipeline parameter to store in config.json (repeatable)')


def run(args) -> int:
    if args.frames is None:
        args.frames = 5 if args.scene == "rigid" else 10
    if args.size is None:
        args.size = 64 if args.scene == "rigid" else 128
    try:
        pipeline = parse_overrides(args.set)
        scene = build_scene(args)
        config_path = scene.write(Path(args.out), pipeline=pipeline)
        logger.info(f"Generated {args.scene} scene: {scene.description}")
        logger.info(f"Source {len(scene.source)} / edited {len(scene.edited)} Gaussians, "
                    f"{scene.n_frames} frames, {len(scene.cameras)} cameras")
        logger.info(f"Config written to {config_path}")
        return 0
    except Exception as e:
        logger.error(f"Scene generation failed: {e}")
        return 1


def main():
    parser = argparse.ArgumentParser(description='Generate oracle scenes for the edit propagation pipeline')
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == '__main__':
    exit(main())
