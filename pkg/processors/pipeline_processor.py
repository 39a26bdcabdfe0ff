#!/usr/bin/env python3
"""
Pipeline Processor
Runs anchors -> match -> propagate -> refine -> render for one edit session
and writes report.json next to the stage artifacts.

Exit codes: 0 success, 2 Sinkhorn did not converge (all artifacts still
written), 1 any stage failed.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.config import STAGES, configure_logging, load_session
from functions.errors import StageError
from functions.run_layout import RunLayout
from processors.anchor_processor import AnchorProcessor
from processors.match_processor import MatchProcessor
from processors.propagation_processor import PropagationProcessor
from processors.refine_processor import RefineProcessor, trainable_mask
from processors.render_processor import RenderProcessor

configure_logging()
logger = logging.getLogger(__name__)


@dataclass
class PipelineReport:
    seed: Optional[int] = None
    config: Dict = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    anchors: Dict = field(default_factory=dict)
    sinkhorn: Dict = field(default_factory=dict)
    propagation: Dict = field(default_factory=dict)
    ndd: Dict[str, float] = field(default_factory=dict)
    refine: Dict = field(default_factory=dict)
    renders: int = 0
    warnings: List[Dict[str, str]] = field(default_factory=list)
    stages_completed: List[str] = field(default_factory=list)
    status: str = "pending"
    error: Optional[Dict] = None

    def warn(self, stage: str, message: str):
        self.warnings.append({"stage": stage, "message": message})

    def to_dict(self, include_timings: bool = True) -> Dict:
        document = {
            "seed": self.seed,
            "config": self.config,
            "anchors": self.anchors,
            "sinkhorn": self.sinkhorn,
            "propagation": self.propagation,
            "ndd": self.ndd,
            "refine": self.refine,
            "renders": self.renders,
            "warnings": self.warnings,
            "stages_completed": self.stages_completed,
            "status": self.status,
            "error": self.error,
        }
        if include_timings:
            document["timings"] = self.timings
        return document

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path


class PipelineProcessor:
    """End-to-end driver; each stage's failure is re-raised as StageError."""

    def __init__(self, config_path, out_dir, seed: Optional[int] = None, threads: int = 1,
                 emit_maps: bool = False, stop_after: Optional[str] = None):
        if stop_after is not None and stop_after not in STAGES:
            raise ValueError(f"stop_after must be one of {STAGES}, got {stop_after!r}")
        self.config_path = Path(config_path)
        self.layout = RunLayout(out_dir)
        self.seed = seed
        self.threads = threads
        self.emit_maps = emit_maps
        self.stop_after = stop_after
        self.report = PipelineReport()

    def _stage(self, name: str, work):
        start = time.perf_counter()
        try:
            result = work()
        except Exception as e:
            raise StageError(name, e) from e
        finally:
            self.report.timings[name] = round(time.perf_counter() - start, 6)
        if name in STAGES:
            self.report.stages_completed.append(name)
        return result

    def _done(self, name: str) -> bool:
        return self.stop_after == name

    def run(self) -> int:
        try:
            converged = self._run_stages()
        except StageError as e:
            logger.error(f"Pipeline failed: {e}")
            self.report.status = "error"
            self.report.error = {"stage": e.stage, "type": type(e.cause).__name__, "message": str(e.cause)}
            diagnostics = getattr(e.cause, "diagnostics", None)
            if diagnostics:
                self.report.error["diagnostics"] = {
                    key: value.item() if isinstance(value, np.generic) else value
                    for key, value in diagnostics.items()
                }
            self.report.save(self.layout.report)
            return 1
        self.report.status = "ok" if converged else "not_converged"
        self.report.save(self.layout.report)
        self.log_summary()
        return 0 if converged else 2

    def _run_stages(self) -> bool:
        report = self.report
        session = self._stage("load", lambda: load_session(self.config_path, seed=self.seed))
        config = session.config
        report.seed = config.seed
        report.config = config.to_dict()

        anchor_stage = AnchorProcessor(session, self.layout.root)
        anchors_src, anchors_edit = self._stage("anchors", anchor_stage.process)
        report.anchors = anchor_stage.summary()
        for message in anchor_stage.warnings():
            report.warn("anchors", message)
        if self._done("anchors"):
            return True

        corr = None
        converged = True
        if config.guidance == "anchor":
            match_stage = MatchProcessor(anchors_src, anchors_edit, config.sinkhorn, self.layout.root)
            corr = self._stage("match", match_stage.process)
            report.sinkhorn = match_stage.summary()
            converged = match_stage.converged
            for message in match_stage.warnings():
                report.warn("match", message)
        else:
            report.warn("match", "guidance=nearest: anchor matching skipped")
            report.stages_completed.append("match")
        if self._done("match"):
            return converged

        propagate_stage = PropagationProcessor(session, anchors_src, anchors_edit, corr, self.layout.root)
        sequence = self._stage("propagate", propagate_stage.process)
        propagation = propagate_stage.report()
        report.ndd = propagation.pop("ndd")
        propagation.pop("warnings")
        report.propagation = propagation
        for message in propagate_stage.warnings():
            report.warn("propagate", message)
        if self._done("propagate"):
            return converged

        trainable = trainable_mask(session.source_cloud, session.edited_cloud, config.refine.freeze_unedited)
        refine_stage = RefineProcessor(sequence, session.cameras, config.refine, self.layout.root,
                                       trainable=trainable, threads=self.threads, emit_maps=self.emit_maps)
        refined = self._stage("refine", refine_stage.process)
        report.refine = refine_stage.summary()
        for message in refine_stage.warnings():
            report.warn("refine", message)
        if self._done("refine"):
            return converged

        render_stage = RenderProcessor(refined, session.cameras, self.layout.root, threads=self.threads,
                                       emit_maps=self.emit_maps)
        report.renders = len(self._stage("render", render_stage.process))
        return converged

    def log_summary(self):
        report = self.report
        logger.info("=== PIPELINE SUMMARY ===")
        logger.info(f"Status: {report.status}; stages: {', '.join(report.stages_completed)}")
        for stage, seconds in report.timings.items():
            logger.info(f"  {stage}: {seconds:.3f}s")
        if report.ndd:
            logger.info(f"Max NDD: {max(report.ndd.values()):.3e}")
        logger.info(f"Warnings: {len(report.warnings)}; report at {self.layout.report}")


def add_arguments(parser: argparse.ArgumentParser):
    # Inputs and outputs
    parser.add_argument('--config', type=str, required=True,
                        help='Session config JSON (inputs, cameras, pipeline)')
    parser.add_argument('--out', type=str, default='output',
                        help='Output directory (default: output)')

    # Run control
    parser.add_argument('--stop-after', choices=STAGES,
                        help='Stop after this stage; later artifacts are not written')
    parser.add_argument('--seed', type=int,
                        help='Override the pipeline seed')
    parser.add_argument('--threads', type=int, default=1,
                        help='Worker threads for rendering and refinement setup (default: 1)')
    parser.add_argument('--emit-maps', action='store_true',
                        help='Write uncertainty, mask, flow and color float maps')


def run(args) -> int:
    try:
        processor = PipelineProcessor(args.config, args.out, seed=args.seed, threads=args.threads,
                                      emit_maps=args.emit_maps, stop_after=args.stop_after)
    except Exception as e:
        logger.error(f"Invalid pipeline arguments: {e}")
        return 1
    return processor.run()


def main():
    parser = argparse.ArgumentParser(description='Propagate a frame-1 Gaussian edit through a dynamic scene')
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == '__main__':
    exit(main())
