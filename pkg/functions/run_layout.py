#!/usr/bin/env python3
"""
File layout of one pipeline output directory.

    <out>/anchors_src.json, anchors_edit.json      anchor sets
    <out>/plan_summary.json, correspondence.json   transport plan summary + corr
    <out>/frames/edited_tNNN.g4dc                  propagated sequence
    <out>/refined/refined_tNNN.g4dc                refined sequence
    <out>/renders/vVV_tNNN.png                     final renders
    <out>/maps/<kind>_vVV_tNNN.g4di                float maps (--emit-maps)
    <out>/propagate_report.json                    NDD + influence stats
    <out>/loss_trace.csv, report.json
"""

import re
from dataclasses import dataclass
from pathlib import Path
from typing import List

from functions.scene_model import GaussianCloud, load_cloud, save_cloud

FRAME_PATTERN = re.compile(r"_t(\d{3,})\.g4dc$")


@dataclass(frozen=True)
class RunLayout:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    @property
    def anchors_src(self) -> Path:
        return self.root / "anchors_src.json"

    @property
    def anchors_edit(self) -> Path:
        return self.root / "anchors_edit.json"

    @property
    def plan_summary(self) -> Path:
        return self.root / "plan_summary.json"

    @property
    def correspondence(self) -> Path:
        return self.root / "correspondence.json"

    @property
    def frames_dir(self) -> Path:
        return self.root / "frames"

    @property
    def refined_dir(self) -> Path:
        return self.root / "refined"

    @property
    def renders_dir(self) -> Path:
        return self.root / "renders"

    @property
    def maps_dir(self) -> Path:
        return self.root / "maps"

    @property
    def propagate_report(self) -> Path:
        return self.root / "propagate_report.json"

    @property
    def loss_trace(self) -> Path:
        return self.root / "loss_trace.csv"

    @property
    def report(self) -> Path:
        return self.root / "report.json"

    def frame_path(self, t: int) -> Path:
        return self.frames_dir / f"edited_t{t:03d}.g4dc"

    def refined_path(self, t: int) -> Path:
        return self.refined_dir / f"refined_t{t:03d}.g4dc"

    def render_path(self, v: int, t: int) -> Path:
        return self.renders_dir / f"v{v:02d}_t{t:03d}.png"

    def map_path(self, kind: str, v: int, t: int) -> Path:
        return self.maps_dir / f"{kind}_v{v:02d}_t{t:03d}.g4di"


def write_sequence(sequence: List[GaussianCloud], directory: Path, prefix: str) -> List[Path]:
    return [save_cloud(cloud, Path(directory) / f"{prefix}_t{cloud.frame:03d}.g4dc") for cloud in sequence]


def read_sequence(directory) -> List[GaussianCloud]:
    """Clouds from <prefix>_tNNN.g4dc files, ordered by frame; frames must run 1..T."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Frame directory not found: {directory}")
    frames = []
    for path in directory.glob("*.g4dc"):
        match = FRAME_PATTERN.search(path.name)
        if match:
            frames.append((int(match.group(1)), path))
    frames.sort()
    if not frames:
        raise FileNotFoundError(f"No frame files (*_tNNN.g4dc) in {directory}")
    expected = list(range(1, len(frames) + 1))
    if [t for t, _ in frames] != expected:
        raise FileNotFoundError(f"{directory}: frames {[t for t, _ in frames]} are not contiguous from 1")
    return [load_cloud(path, frame=t) for t, path in frames]
