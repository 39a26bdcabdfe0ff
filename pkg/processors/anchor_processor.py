#!/usr/bin/env python3
"""
Anchor Processor
Builds structural anchors for the frame-1 source and edited clouds against one
shared bounding sphere and line set, and writes both AnchorSets as JSON.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Tuple

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.anchor_extract import AnchorSet, extract_anchor_pair
from functions.config import configure_logging, derive_seed, load_session
from functions.run_layout import RunLayout
from functions.scene_model import EditSession

configure_logging()
logger = logging.getLogger(__name__)


class AnchorProcessor:
    """Anchor stage for one edit session."""

    def __init__(self, session: EditSession, out_dir):
        self.session = session
        self.layout = RunLayout(out_dir)
        self.anchors_src = None
        self.anchors_edit = None

    def process(self) -> Tuple[AnchorSet, AnchorSet]:
        config = self.session.config
        seed = derive_seed(config.seed, "anchors")
        logger.info(f"Extracting anchors: k={config.anchor.k}, n_rays={config.anchor.n_rays}")
        self.anchors_src, self.anchors_edit = extract_anchor_pair(
            self.session.source_cloud.mu, self.session.edited_cloud.mu,
            config.anchor.k, config.anchor.n_rays, seed,
        )
        self.anchors_src.save(self.layout.anchors_src)
        self.anchors_edit.save(self.layout.anchors_edit)
        self.log_summary()
        return self.anchors_src, self.anchors_edit

    def summary(self) -> Dict:
        def describe(anchors: AnchorSet) -> Dict:
            return {
                "anchors": len(anchors),
                "neighborhoods": anchors.n_neighborhoods,
                "anchored_fraction": anchors.anchored_fraction,
                "d_mean": anchors.d_mean,
                "delta": anchors.delta,
                "fallback_gaussians": anchors.fallback_gaussians,
            }
        return {"source": describe(self.anchors_src), "edit": describe(self.anchors_edit),
                "n": len(self.anchors_src), "m": len(self.anchors_edit)}

    def warnings(self) -> List[str]:
        messages = []
        for name, anchors in (("source", self.anchors_src), ("edit", self.anchors_edit)):
            if anchors.fallback_gaussians:
                messages.append(f"{anchors.fallback_gaussians} {name} Gaussians were not anchored by any line "
                                f"and joined their nearest anchor")
        return messages

    def log_summary(self):
        summary = self.summary()
        logger.info("=== ANCHOR SUMMARY ===")
        for name in ("source", "edit"):
            block = summary[name]
            logger.info(f"{name}: {block['anchors']} anchors from {block['neighborhoods']} neighborhoods "
                        f"({block['anchored_fraction']:.1%}), d_mean={block['d_mean']:.5g}, "
                        f"delta={block['delta']:.5g}, fallback={block['fallback_gaussians']}")


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', type=str, required=True,
                        help='Session config JSON (inputs, cameras, pipeline)')
    parser.add_argument('--out', type=str, default='output',
                        help='Output directory (default: output)')
    parser.add_argument('--seed', type=int,
                        help='Override the pipeline seed')


def run(args) -> int:
    try:
        session = load_session(args.config, seed=args.seed)
        AnchorProcessor(session, Path(args.out)).process()
        return 0
    except Exception as e:
        logger.error(f"Anchor extraction failed: {e}")
        return 1


def main():
    parser = argparse.ArgumentParser(description='Extract anchors for the source and edited frame-1 clouds')
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == '__main__':
    exit(main())
