#!/usr/bin/env python3
"""
Shared run-directory access for app.py and pages/*.py (Streamlit runs every
file under pages/ as its own script, so location config and the readers for
report.json, loss_trace.csv and renders live here once).
"""

import json
import os
import re
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
import streamlit as st

RENDER_PATTERN = re.compile(r"^v(\d{2,})_t(\d{3,})\.png$")


def get_secret(key: str, default=None):
    try:
        return st.secrets.get(key, default)
    except Exception:
        return default


RUN_ROOT = Path(os.environ.get("G4D_RUN_DIR") or get_secret("run_dir", "output"))


def list_runs(root: Path = None) -> List[Path]:
    """The root itself when it holds a report.json, else its subdirectories that do."""
    root = Path(root or RUN_ROOT)
    if (root / "report.json").exists():
        return [root]
    if not root.is_dir():
        return []
    return sorted(child for child in root.iterdir() if (child / "report.json").exists())


def load_report(run_dir: Path) -> Dict:
    return json.loads((Path(run_dir) / "report.json").read_text())


def ndd_frame(report: Dict) -> pd.DataFrame:
    ndd = report.get("ndd") or {}
    df = pd.DataFrame({"t": [int(t) for t in ndd], "ndd": list(ndd.values())}, columns=["t", "ndd"])
    return df.sort_values("t").reset_index(drop=True)


def load_loss_trace(run_dir: Path) -> Optional[pd.DataFrame]:
    path = Path(run_dir) / "loss_trace.csv"
    if not path.exists():
        return None
    return pd.read_csv(path)


def loss_by_step(trace: pd.DataFrame) -> pd.DataFrame:
    return trace.groupby("step")[["L_fore", "L_back", "L_refine"]].mean()


def list_renders(run_dir: Path) -> pd.DataFrame:
    renders = Path(run_dir) / "renders"
    rows = []
    if renders.is_dir():
        for path in sorted(renders.glob("*.png")):
            match = RENDER_PATTERN.match(path.name)
            if match:
                rows.append({"v": int(match.group(1)), "t": int(match.group(2)), "path": str(path)})
    return pd.DataFrame(rows, columns=["v", "t", "path"])


def warnings_frame(report: Dict) -> pd.DataFrame:
    return pd.DataFrame(report.get("warnings") or [], columns=["stage", "message"])


def require_runs(runs: List[Path]):
    if not runs:
        st.warning(
            f"No runs found under `{RUN_ROOT}`. Run `python g4d.py run --config <config.json> --out <dir>` "
            "and point the `G4D_RUN_DIR` environment variable (or `run_dir` in "
            "`.streamlit/secrets.toml`) at the output directory or its parent."
        )
        st.stop()
