#!/usr/bin/env python3
"""
Run browser: report, NDD per frame, refinement loss trace and renders for
pipeline output directories under G4D_RUN_DIR.
"""

import pandas as pd
import streamlit as st

from run_store import (
    RUN_ROOT,
    list_renders,
    list_runs,
    load_loss_trace,
    load_report,
    loss_by_step,
    ndd_frame,
    require_runs,
    warnings_frame,
)

st.set_page_config(page_title="G4D Edit Propagation", layout="wide")


def show_table(df: pd.DataFrame, key: str):
    if df.empty:
        st.info("No rows.")
        return
    st.dataframe(df, use_container_width=True)
    st.download_button(
        "Download CSV", df.to_csv(index=False), file_name=f"{key}.csv",
        mime="text/csv", key=f"dl_{key}",
    )


def show_overview(report: dict):
    cols = st.columns(4)
    cols[0].metric("Status", report.get("status", "unknown"))
    anchors = report.get("anchors") or {}
    cols[1].metric("Anchors (source / edit)", f"{anchors.get('n', '-')} / {anchors.get('m', '-')}")
    sinkhorn = report.get("sinkhorn") or {}
    cols[2].metric("Sinkhorn iterations", sinkhorn.get("iterations", "-"))
    cols[3].metric("Seed", report.get("seed", "-"))
    if report.get("error"):
        error = report["error"]
        st.error(f"[{error['stage']}] {error['type']}: {error['message']}")


def show_renders(run_dir):
    renders = list_renders(run_dir)
    if renders.empty:
        st.info("No renders in this run.")
        return
    views = sorted(renders["v"].unique())
    frames = sorted(renders["t"].unique())
    view = st.selectbox("View", views)
    if len(frames) > 1:
        frame = st.select_slider("Frame", options=frames)
    else:
        frame = frames[0]
    row = renders[(renders["v"] == view) & (renders["t"] == frame)]
    if not row.empty:
        st.image(row["path"].iloc[0], caption=f"view {view}, frame {frame}", width=384)


def main():
    st.title("Edit Propagation Runs")
    st.caption(f"Run directory: {RUN_ROOT}")
    runs = list_runs()
    require_runs(runs)

    with st.sidebar:
        st.header("Runs")
        run_dir = st.radio("Run", runs, format_func=lambda path: path.name or str(path))

    report = load_report(run_dir)
    show_overview(report)

    tab_ndd, tab_loss, tab_renders, tab_report = st.tabs(["NDD", "Loss trace", "Renders", "Report"])
    with tab_ndd:
        ndd = ndd_frame(report)
        if ndd.empty:
            st.info("No NDD recorded (pipeline stopped before propagation).")
        else:
            st.line_chart(ndd.set_index("t"))
            show_table(ndd, "ndd")
    with tab_loss:
        trace = load_loss_trace(run_dir)
        if trace is None or trace.empty:
            st.info("No refinement trace in this run.")
        else:
            st.line_chart(loss_by_step(trace))
            show_table(trace, "loss_trace")
    with tab_renders:
        show_renders(run_dir)
    with tab_report:
        show_table(warnings_frame(report), "warnings")
        st.json(report)


if __name__ == "__main__":
    main()
