#!/usr/bin/env python3
"""
NDD Metrics
Neighborhood distance deviation per frame for anchor-guided propagation and
the nearest-source baseline, and an optional Sinkhorn parameter sweep.
Writes CSV via pandas.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from itertools import product
from typing import Dict, List, Tuple

import pandas as pd

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.anchor_extract import AnchorSet, extract_anchor_pair
from functions.config import SinkhornConfig, configure_logging, derive_seed, load_session
from functions.motion_propagate import ndd_per_frame, propagate_with_guidance
from functions.scene_model import EditSession
from functions.uot_match import match_anchors

configure_logging()
logger = logging.getLogger(__name__)

SWEEP_LAMBDA0 = (0.05, 0.1, 0.2, 0.3)
SWEEP_LAMBDA_MARGINAL = (0.6, 1.0, 3.0, 11.0)


def session_anchors(session: EditSession) -> Tuple[AnchorSet, AnchorSet]:
    config = session.config
    return extract_anchor_pair(session.source_cloud.mu, session.edited_cloud.mu, config.anchor.k,
                               config.anchor.n_rays, derive_seed(config.seed, "anchors"))


def guidance_ndd(session: EditSession, anchors_src: AnchorSet, anchors_edit: AnchorSet, guidance: str,
                 sinkhorn: SinkhornConfig = None) -> Tuple[Dict[int, float], Dict]:
    """Per-frame NDD for one guidance mode plus solver details (empty for the baseline)."""
    corr = None
    details = {}
    if guidance == "anchor":
        _, plan, corr = match_anchors(anchors_src.positions, anchors_edit.positions,
                                      sinkhorn or session.config.sinkhorn)
        details = {"iterations": plan.iterations, "converged": plan.converged, "marginal_err": plan.marginal_err}
    sequence, influence = propagate_with_guidance(session.edited_cloud, session.source_cloud, session.deformation,
                                                  guidance, anchors_src, anchors_edit, corr)
    details["fallback_gaussians"] = influence.n_fallback
    return ndd_per_frame(anchors_edit, sequence, session.config.ndd_k), details


def ndd_table(session: EditSession, anchors_src: AnchorSet, anchors_edit: AnchorSet) -> pd.DataFrame:
    rows = []
    for guidance in ("anchor", "nearest"):
        ndd, _ = guidance_ndd(session, anchors_src, anchors_edit, guidance)
        rows.extend({"guidance": guidance, "t": t, "ndd": value} for t, value in ndd.items())
    return pd.DataFrame(rows, columns=["guidance", "t", "ndd"])


def sweep_table(session: EditSession, anchors_src: AnchorSet, anchors_edit: AnchorSet,
                lambda0_values=SWEEP_LAMBDA0, marginal_values=SWEEP_LAMBDA_MARGINAL) -> pd.DataFrame:
    """Mean/max NDD over frames for each (lambda0, lambda1 = lambda2) setting, plus the baseline."""
    rows: List[Dict] = []
    base = session.config.sinkhorn
    for lambda0, marginal in product(lambda0_values, marginal_values):
        sinkhorn = replace(base, lambda0=lambda0, lambda1=marginal, lambda2=marginal)
        ndd, details = guidance_ndd(session, anchors_src, anchors_edit, "anchor", sinkhorn)
        values = pd.Series(list(ndd.values()), dtype=float)
        rows.append({"guidance": "anchor", "lambda0": lambda0, "lambda1": marginal, "lambda2": marginal,
                     "mean_ndd": values.mean(), "max_ndd": values.max(), **details})
        logger.info(f"lambda0={lambda0}, lambda1=lambda2={marginal}: mean NDD {values.mean():.4e}")
    ndd, details = guidance_ndd(session, anchors_src, anchors_edit, "nearest")
    values = pd.Series(list(ndd.values()), dtype=float)
    rows.append({"guidance": "nearest", "mean_ndd": values.mean(), "max_ndd": values.max(), **details})
    columns = ["guidance", "lambda0", "lambda1", "lambda2", "mean_ndd", "max_ndd", "iterations",
               "converged", "marginal_err", "fallback_gaussians"]
    return pd.DataFrame(rows).reindex(columns=columns)


def print_summary(df: pd.DataFrame):
    print("\n=== NDD SUMMARY ===")
    if "t" in df.columns:
        print(df.groupby("guidance")["ndd"].agg(["mean", "max"]).to_string())
    else:
        print(df[["guidance", "lambda0", "lambda1", "mean_ndd", "max_ndd"]].to_string(index=False))


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', type=str, required=True,
                        help='Session config JSON')
    parser.add_argument('--output-csv', type=str, required=True,
                        help='Path to output CSV file')
    parser.add_argument('--sweep', action='store_true',
                        help='Sweep lambda0 x (lambda1 = lambda2) instead of per-frame NDD')
    parser.add_argument('--seed', type=int,
                        help='Override the pipeline seed')
    parser.add_argument('--show-summary', action='store_true',
                        help='Print summary statistics')


def run(args) -> int:
    try:
        session = load_session(args.config, seed=args.seed)
        anchors_src, anchors_edit = session_anchors(session)
        df = sweep_table(session, anchors_src, anchors_edit) if args.sweep else \
            ndd_table(session, anchors_src, anchors_edit)
        df.to_csv(args.output_csv, index=False)
        logger.info(f"Saved {len(df)} rows to {args.output_csv}")
        if args.show_summary:
            print_summary(df)
        return 0
    except Exception as e:
        logger.error(f"NDD metrics failed: {e}")
        return 1


def main():
    parser = argparse.ArgumentParser(description='Neighborhood distance deviation metrics and Sinkhorn sweep')
    add_arguments(parser)
    return run(parser.parse_args())


if __name__ == '__main__':
    exit(main())
