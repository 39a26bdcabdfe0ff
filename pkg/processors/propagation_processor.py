#!/usr/bin/env python3
"""
Propagation Processor
Transfers the source deformation onto the edited cloud through the anchor
correspondence, writes one cloud per frame and a JSON report with NDD per
frame and fallback counts.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.anchor_extract import AnchorSet
from functions.config import configure_logging, load_session
from functions.motion_propagate import influence_summary, ndd_per_frame, propagate_with_guidance
from functions.run_layout import RunLayout, write_sequence
from functions.scene_model import EditSession, GaussianCloud
from functions.uot_match import CorrespondenceMap
from processors.anchor_processor import AnchorProcessor
from processors.match_processor import MatchProcessor

configure_logging()
logger = logging.getLogger(__name__)


class PropagationProcessor:

    def __init__(self, session: EditSession, anchors_src: AnchorSet, anchors_edit: AnchorSet,
                 corr: Optional[CorrespondenceMap], out_dir):
        self.session = session
        self.anchors_src = anchors_src
        self.anchors_edit = anchors_edit
        self.corr = corr
        self.layout = RunLayout(out_dir)
        self.sequence: List[GaussianCloud] = []
        self.influence = None
        self.ndd: Dict[int, float] = {}

    def process(self) -> List[GaussianCloud]:
        config = self.session.config
        logger.info(f"Propagating {len(self.session.edited_cloud)} edited Gaussians over "
                    f"{self.session.deformation.n_frames} frames (guidance={config.guidance})")
        self.sequence, self.influence = propagate_with_guidance(
            self.session.edited_cloud, self.session.source_cloud, self.session.deformation, config.guidance,
            self.anchors_src, self.anchors_edit, self.corr,
        )
        self.ndd = ndd_per_frame(self.anchors_edit, self.sequence, config.ndd_k)
        write_sequence(self.sequence, self.layout.frames_dir, "edited")
        self.layout.propagate_report.write_text(json.dumps(self.report(), indent=2, sort_keys=True))
        self.log_summary()
        return self.sequence

    def report(self) -> Dict:
        return {
            "frames": len(self.sequence),
            "anchors": {"n": len(self.anchors_src), "m": len(self.anchors_edit),
                        "fallback_source": self.anchors_src.fallback_gaussians,
                        "fallback_edit": self.anchors_edit.fallback_gaussians},
            "influence": influence_summary(self.influence),
            "ndd": {str(t): value for t, value in self.ndd.items()},
            "warnings": self.warnings(),
        }

    def warnings(self) -> List[str]:
        if self.influence is None or not self.influence.n_fallback:
            return []
        return [f"{self.influence.n_fallback} edited Gaussians had degenerate influence weights and "
                f"copied their nearest source Gaussian"]

    def log_summary(self):
        logger.info("=== PROPAGATION SUMMARY ===")
        logger.info(f"Frames written: {len(self.sequence)} to {self.layout.frames_dir}")
        summary = influence_summary(self.influence)
        logger.info(f"Sources per edited Gaussian: mean {summary['mean_sources']:.2f}, "
                    f"max {summary['max_sources']}, fallbacks {summary['fallback_gaussians']}")
        if self.ndd:
            logger.info(f"NDD max over frames: {max(self.ndd.values()):.3e}")


def load_or_build_matching(session: EditSession, out_dir: Path):
    """Anchors and correspondence from <out> when present, otherwise run those stages."""
    layout = RunLayout(out_dir)
    if layout.anchors_src.exists() and layout.anchors_edit.exists():
        anchors_src = AnchorSet.load(layout.anchors_src)
        anchors_edit = AnchorSet.load(layout.anchors_edit)
    else:
        anchors_src, anchors_edit = AnchorProcessor(session, out_dir).process()
    if session.config.guidance == "nearest":
        return anchors_src, anchors_edit, None
    if layout.correspondence.exists():
        corr = CorrespondenceMap.load(layout.correspondence)
    else:
        corr = MatchProcessor(anchors_src, anchors_edit, session.config.sinkhorn, out_dir).process()
    return anchors_src, anchors_edit, corr


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', type=str, required=True,
                        help='Session config JSON (inputs, cameras, pipeline)')
    parser.add_argument('--out', type=str, default='output',
                        help='Output directory; anchors/correspondence are reused from here if present')
    parser.add_argument('--seed', type=int,
                        help='Override the pipeline seed')


def run(args) -> int:
    try:
        session = load_session(args.config, seed=args.seed)
        out_dir = Path(args.out)
        anchors_src, anchors_edit, corr = load_or_build_matching(session, out_dir)
        PropagationProcessor(session, anchors_src, anchors_edit, corr, out_dir).process()
        return 0
    except Exception as e:
        logger.error(f"Propagation failed: {e}")
        return 1


def main():
    parser = argparse.ArgumentParser(description='Propagate the frame-1 edit to every frame')
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == '__main__':
    exit(main())
