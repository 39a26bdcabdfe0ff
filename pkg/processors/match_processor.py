#!/usr/bin/env python3
"""
Match Processor
Matches edit anchors to source anchors with unbalanced Sinkhorn on a Welsch
cost and writes the plan summary plus the correspondence map.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.anchor_extract import AnchorSet
from functions.config import SinkhornConfig, configure_logging, load_pipeline_config
from functions.run_layout import RunLayout
from functions.uot_match import CorrespondenceMap, match_anchors

configure_logging()
logger = logging.getLogger(__name__)


class MatchProcessor:

    def __init__(self, anchors_src: AnchorSet, anchors_edit: AnchorSet, config: SinkhornConfig, out_dir):
        self.anchors_src = anchors_src
        self.anchors_edit = anchors_edit
        self.config = config
        self.layout = RunLayout(out_dir)
        self.cost = None
        self.plan = None
        self.corr = None

    def process(self) -> CorrespondenceMap:
        self.cost, self.plan, self.corr = match_anchors(self.anchors_src.positions, self.anchors_edit.positions,
                                                        self.config)
        self.layout.root.mkdir(parents=True, exist_ok=True)
        self.layout.plan_summary.write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        self.corr.save(self.layout.correspondence)
        self.log_summary()
        return self.corr

    @property
    def converged(self) -> bool:
        return bool(self.plan is not None and self.plan.converged)

    def summary(self) -> Dict:
        summary = self.plan.summary()
        summary.update({"beta": self.cost.beta, "d_med": self.cost.d_med,
                        "matched_source_anchors": int(len(set(self.corr.corr.tolist())))})
        return summary

    def warnings(self) -> List[str]:
        if self.converged:
            return []
        return [f"Sinkhorn stopped after {self.plan.iterations} iterations with residual "
                f"{self.plan.marginal_err:.3e} (tol {self.config.tol:g})"]

    def log_summary(self):
        summary = self.summary()
        logger.info("=== MATCH SUMMARY ===")
        logger.info(f"Plan {summary['shape'][0]}x{summary['shape'][1]}, mass {summary['mass']:.6f}")
        logger.info(f"Iterations: {summary['iterations']}, residual: {summary['marginal_err']:.3e}, "
                    f"converged: {summary['converged']}")
        logger.info(f"Edit anchors map onto {summary['matched_source_anchors']} distinct source anchors")


def add_arguments(parser: argparse.ArgumentParser):
    # Anchor inputs
    parser.add_argument('--anchors-src', type=str,
                        help='Source AnchorSet JSON (default: <out>/anchors_src.json)')
    parser.add_argument('--anchors-edit', type=str,
                        help='Edit AnchorSet JSON (default: <out>/anchors_edit.json)')

    # Solver parameters
    parser.add_argument('--config', type=str,
                        help='Session config JSON; only its pipeline block is read')
    parser.add_argument('--out', type=str, default='output',
                        help='Output directory (default: output)')


def run(args) -> int:
    try:
        layout = RunLayout(Path(args.out))
        anchors_src = AnchorSet.load(args.anchors_src or layout.anchors_src)
        anchors_edit = AnchorSet.load(args.anchors_edit or layout.anchors_edit)
        config = load_pipeline_config(args.config).sinkhorn if args.config else SinkhornConfig()
        processor = MatchProcessor(anchors_src, anchors_edit, config, layout.root)
        processor.process()
        return 0 if processor.converged else 2
    except Exception as e:
        logger.error(f"Anchor matching failed: {e}")
        return 1


def main():
    parser = argparse.ArgumentParser(description='Match edit anchors to source anchors with unbalanced OT')
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == '__main__':
    exit(main())
