#!/usr/bin/env python3
"""
Pipeline reference: stages, artifacts and configuration defaults.

The defaults table is read from functions.config at page-load time, so a new
or renamed pipeline key shows up here without editing this page. Key
descriptions below are hand-authored and degrade to "no description yet" for
keys not listed.
"""

import sys
from pathlib import Path

import pandas as pd
import streamlit as st

sys.path.append(str(Path(__file__).parent.parent))

from functions.config import GUIDANCE_MODES, STAGES, defaults_table

st.set_page_config(page_title="Documentation - G4D Edit Propagation", layout="wide")

KEY_DESCRIPTIONS = {
    "k": "Gaussians per neighborhood; each neighborhood holds k+1 Gaussians before anchoring.",
    "n_rays": "Lines sampled through the shared bounding sphere for the cylinder test.",
    "gamma": "Welsch bandwidth as a fraction of the median anchor distance.",
    "lambda0": "Entropic regularization of the transport plan.",
    "lambda1": "KL weight on the source-anchor marginal.",
    "lambda2": "KL weight on the edit-anchor marginal.",
    "sinkhorn_tol": "Stop when the log-potentials change less than this in one sweep.",
    "sinkhorn_max_iters": "Iteration cap; hitting it gives exit code 2.",
    "epsilon": "Mask threshold: pixels with uncertainty above epsilon x mean are refined.",
    "eta": "SSIM weight in the masked foreground loss.",
    "zeta": "Background preservation weight in the total refinement loss.",
    "step_size": "Gradient descent step on SH coefficients.",
    "momentum": "Heavy-ball momentum of the SH update.",
    "refine_iters": "Refinement steps.",
    "max_pairs_per_epoch": "Cap on (frame, view) pairs per step; frames are thinned uniformly.",
    "ndd_k": "Neighbors per anchor in the NDD diagnostic.",
    "guidance": f"Motion source for edited Gaussians: one of {', '.join(GUIDANCE_MODES)}.",
    "freeze_unedited": "Only Gaussians that differ from the source receive SH updates.",
    "seed": "Root seed; every stage derives its own sub-seed from it.",
}

STAGE_ARTIFACTS = {
    "anchors": "anchors_src.json, anchors_edit.json",
    "match": "plan_summary.json, correspondence.json",
    "propagate": "frames/edited_tNNN.g4dc, propagate_report.json",
    "refine": "refined/refined_tNNN.g4dc, loss_trace.csv, maps/*.g4di with --emit-maps",
    "render": "renders/vVV_tNNN.png",
}


def main():
    st.title("Documentation")

    st.header("Stages")
    stages = pd.DataFrame([{"stage": stage, "artifacts": STAGE_ARTIFACTS.get(stage, "")} for stage in STAGES])
    st.dataframe(stages, use_container_width=True, hide_index=True)
    st.markdown(
        "`python g4d.py run --config config.json --out <dir>` runs every stage and writes "
        "`report.json`. `--stop-after <stage>` ends the run early. Exit code 0 means success, "
        "2 means Sinkhorn hit its iteration cap but every artifact was written, 1 means a stage failed "
        "(the report names the stage)."
    )

    st.header("Configuration defaults")
    defaults = pd.DataFrame(defaults_table())
    defaults["default"] = defaults["default"].astype(str)
    defaults["description"] = defaults["key"].map(KEY_DESCRIPTIONS).fillna("no description yet")
    st.dataframe(defaults, use_container_width=True, hide_index=True)
    st.caption("Precedence: built-in defaults < config.json `pipeline` block < command-line flags.")


main()
