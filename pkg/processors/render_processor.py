#!/usr/bin/env python3
"""
Render Processor
Renders every frame of a sequence from every configured camera to PNG.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.config import configure_logging, load_session
from functions.run_layout import RunLayout, read_sequence
from functions.scene_model import Camera, GaussianCloud
from functions.splat_render import render_color, save_float_image, save_png

configure_logging()
logger = logging.getLogger(__name__)


class RenderProcessor:

    def __init__(self, sequence: List[GaussianCloud], cameras: List[Camera], out_dir, threads: int = 1,
                 emit_maps: bool = False):
        self.sequence = sequence
        self.cameras = cameras
        self.layout = RunLayout(out_dir)
        self.threads = threads
        self.emit_maps = emit_maps
        self.written: List[Path] = []

    def _render_one(self, cloud: GaussianCloud, v: int) -> Path:
        maps = render_color(cloud, self.cameras[v])
        if self.emit_maps:
            save_float_image(maps.color, self.layout.map_path("color", v, cloud.frame))
        return save_png(maps.color, self.layout.render_path(v, cloud.frame))

    def process(self) -> List[Path]:
        jobs = [(cloud, v) for cloud in self.sequence for v in range(len(self.cameras))]
        logger.info(f"Rendering {len(self.sequence)} frames x {len(self.cameras)} views "
                    f"with {self.threads} thread(s)")
        with ThreadPoolExecutor(max_workers=max(1, self.threads)) as executor:
            self.written = list(executor.map(lambda job: self._render_one(*job), jobs))
        logger.info("=== RENDER SUMMARY ===")
        logger.info(f"Images written: {len(self.written)} to {self.layout.renders_dir}")
        return self.written


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', type=str, required=True,
                        help='Session config JSON (cameras)')
    parser.add_argument('--out', type=str, default='output',
                        help='Output directory (default: output)')
    parser.add_argument('--frames-dir', type=str,
                        help='Frames to render (default: <out>/refined, else <out>/frames)')
    parser.add_argument('--threads', type=int, default=1,
                        help='Worker threads, one view per task (default: 1)')
    parser.add_argument('--emit-maps', action='store_true',
                        help='Also write color renders in the float image format')


def run(args) -> int:
    try:
        session = load_session(args.config)
        layout = RunLayout(Path(args.out))
        frames_dir = args.frames_dir
        if frames_dir is None:
            frames_dir = layout.refined_dir if layout.refined_dir.is_dir() else layout.frames_dir
        sequence = read_sequence(frames_dir)
        RenderProcessor(sequence, session.cameras, layout.root, threads=args.threads,
                        emit_maps=args.emit_maps).process()
        return 0
    except Exception as e:
        logger.error(f"Rendering failed: {e}")
        return 1


def main():
    parser = argparse.ArgumentParser(description='Render a frame sequence from every camera')
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == '__main__':
    exit(main())
