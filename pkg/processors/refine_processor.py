#!/usr/bin/env python3
"""
Refine Processor
Runs color-uncertainty-guided appearance refinement over the propagated
sequence and writes the refined clouds, the loss trace CSV and, on request,
the per-(frame, view) uncertainty, mask and flow maps.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.config import RefineConfig, configure_logging, load_session
from functions.cuar_refine import RefineResult, edited_gaussians, refine
from functions.run_layout import RunLayout, read_sequence, write_sequence
from functions.scene_model import Camera, GaussianCloud
from functions.splat_render import save_float_image

configure_logging()
logger = logging.getLogger(__name__)


class RefineProcessor:

    def __init__(self, sequence: List[GaussianCloud], cameras: List[Camera], config: RefineConfig, out_dir,
                 trainable: Optional[np.ndarray] = None, threads: int = 1, emit_maps: bool = False):
        self.sequence = sequence
        self.cameras = cameras
        self.config = config
        self.layout = RunLayout(out_dir)
        self.trainable = trainable
        self.threads = threads
        self.emit_maps = emit_maps
        self.result: Optional[RefineResult] = None

    def process(self) -> List[GaussianCloud]:
        self.result = refine(self.sequence, self.cameras, self.config, trainable=self.trainable,
                             threads=self.threads, keep_maps=self.emit_maps)
        write_sequence(self.result.clouds, self.layout.refined_dir, "refined")
        self.result.trace.to_csv(self.layout.loss_trace, index=False)
        if self.emit_maps:
            self.write_maps()
        self.log_summary()
        return self.result.clouds

    def write_maps(self) -> int:
        written = 0
        for (t, v), maps in sorted(self.result.maps.items()):
            for kind, image in sorted(maps.items()):
                save_float_image(image, self.layout.map_path(kind, v, t))
                written += 1
        logger.info(f"Wrote {written} float maps to {self.layout.maps_dir}")
        return written

    def summary(self) -> Dict:
        summary = self.result.summary()
        if self.trainable is not None:
            summary["trainable_gaussians"] = int(np.count_nonzero(self.trainable))
        return summary

    def warnings(self) -> List[str]:
        return list(self.result.notices) if self.result else []

    def log_summary(self):
        summary = self.summary()
        logger.info("=== REFINEMENT SUMMARY ===")
        logger.info(f"Pairs: {summary['pairs']}, steps: {summary['steps']}")
        if "final_L_fore" in summary:
            logger.info(f"L_fore: {summary['initial_L_fore']:.6f} -> {summary['final_L_fore']:.6f}")
            logger.info(f"L_refine: {summary['initial_L_refine']:.6f} -> {summary['final_L_refine']:.6f}")
        for notice in summary["notices"]:
            logger.info(f"Notice: {notice}")


def trainable_mask(source: GaussianCloud, edited: GaussianCloud, freeze_unedited: bool) -> Optional[np.ndarray]:
    """Rows allowed to change when freeze_unedited is on; None means all rows."""
    if not freeze_unedited:
        return None
    mask = edited_gaussians(source, edited)
    logger.info(f"Freezing {int((~mask).sum())} unedited Gaussians; {int(mask.sum())} trainable")
    return mask


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', type=str, required=True,
                        help='Session config JSON (cameras and refine parameters)')
    parser.add_argument('--out', type=str, default='output',
                        help='Output directory (default: output)')
    parser.add_argument('--frames-dir', type=str,
                        help='Propagated frames (default: <out>/frames)')
    parser.add_argument('--threads', type=int, default=1,
                        help='Worker threads for per-pair precomputation (default: 1)')
    parser.add_argument('--emit-maps', action='store_true',
                        help='Write uncertainty, mask and flow maps as float images')


def run(args) -> int:
    try:
        session = load_session(args.config)
        layout = RunLayout(Path(args.out))
        sequence = read_sequence(args.frames_dir or layout.frames_dir)
        trainable = trainable_mask(session.source_cloud, session.edited_cloud, session.config.refine.freeze_unedited)
        RefineProcessor(sequence, session.cameras, session.config.refine, layout.root, trainable=trainable,
                        threads=args.threads, emit_maps=args.emit_maps).process()
        return 0
    except Exception as e:
        logger.error(f"Refinement failed: {e}")
        return 1


def main():
    parser = argparse.ArgumentParser(description='Refine SH colors of a propagated sequence')
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == '__main__':
    exit(main())
