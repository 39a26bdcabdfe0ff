#!/usr/bin/env python3
"""
Command-line entry point for edit propagation on dynamic Gaussian scenes.

    python g4d.py gen --scene rigid --out scenes/rigid
    python g4d.py run --config scenes/rigid/config.json --out runs/rigid
    python g4d.py anchors|match|propagate|refine|render --config ... --out ...
    python g4d.py metrics --config ... --output-csv ndd.csv [--sweep]
    python g4d.py convert --ply point_cloud.ply --out edited.g4dc

Log verbosity follows G4D_LOG (DEBUG, INFO, WARNING, ERROR).
"""

import argparse
import logging
import os
import sys

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from functions.config import configure_logging
from functions.ply_convert import load_ply_cloud
from functions.scene_model import save_cloud
from ingest import generate_scenes
from processors import (
    anchor_processor,
    match_processor,
    pipeline_processor,
    propagation_processor,
    refine_processor,
    render_processor,
)
from python_analysis_scripts import ndd_metrics

configure_logging()
logger = logging.getLogger(__name__)


def add_convert_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--ply', type=str, required=True,
                        help='3D Gaussian splatting PLY file')
    parser.add_argument('--out', type=str, required=True,
                        help='Output cloud file (.g4dc)')
    parser.add_argument('--max-degree', type=int, default=3, choices=[0, 1, 2, 3],
                        help='Truncate SH above this degree (default: 3)')


def run_convert(args) -> int:
    try:
        cloud = load_ply_cloud(args.ply, max_degree=args.max_degree)
        path = save_cloud(cloud, args.out)
        logger.info(f"Wrote {len(cloud)} Gaussians to {path}")
        return 0
    except Exception as e:
        logger.error(f"Conversion failed: {e}")
        return 1


COMMANDS = {
    "gen": (generate_scenes, "Generate an oracle scene and its config"),
    "anchors": (anchor_processor, "Extract anchors for source and edited clouds"),
    "match": (match_processor, "Match anchors with unbalanced optimal transport"),
    "propagate": (propagation_processor, "Propagate the edit to every frame"),
    "refine": (refine_processor, "Refine SH colors of the propagated sequence"),
    "render": (render_processor, "Render a sequence from every camera"),
    "metrics": (ndd_metrics, "NDD per frame and Sinkhorn sweep"),
    "run": (pipeline_processor, "Run the full pipeline"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Propagate first-frame edits through dynamic Gaussian scenes')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name, (module, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        module.add_arguments(sub)
        sub.set_defaults(handler=module.run)
    convert = subparsers.add_parser('convert', help='Convert a 3DGS PLY file to the cloud format')
    add_convert_arguments(convert)
    convert.set_defaults(handler=run_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == '__main__':
    exit(main())
