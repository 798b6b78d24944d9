"""Run artifacts: trajectory/summary CSVs and a top-down SVG plot."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ..gains import FormationSpec
from .sim import RunSummary, StepAgentRow, TrajectoryLog

TRAJECTORY_COLUMNS = [
    "step",
    "time",
    "agent",
    "x",
    "y",
    "z",
    "yaw",
    "ux",
    "uy",
    "rotation",
    "stopped",
    "pose_rot_err",
    "pose_dir_err",
    "formation_error",
    "min_pair_distance",
]

_PALETTE = [
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trajectory_csv(log: TrajectoryLog, path) -> None:
    lines = [",".join(TRAJECTORY_COLUMNS)]
    for r in log.rows:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.step,
                    r.time,
                    r.agent,
                    r.x,
                    r.y,
                    r.z,
                    r.yaw,
                    r.ux,
                    r.uy,
                    r.rotation,
                    r.stopped,
                    r.pose_rot_err,
                    r.pose_dir_err,
                    r.formation_error,
                    r.min_pair_distance,
                )
            )
        )
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def load_trajectory_csv(path) -> TrajectoryLog:
    """Exact inverse of write_trajectory_csv (floats round-trip via repr)."""
    text = Path(path).read_text(encoding="ascii")
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or lines[0] != ",".join(TRAJECTORY_COLUMNS):
        raise ValueError("unrecognized trajectory CSV header")
    log = TrajectoryLog()
    for ln in lines[1:]:
        p = ln.split(",")
        if len(p) != len(TRAJECTORY_COLUMNS):
            raise ValueError(f"malformed trajectory row: {ln!r}")
        log.rows.append(
            StepAgentRow(
                step=int(p[0]),
                time=float(p[1]),
                agent=int(p[2]),
                x=float(p[3]),
                y=float(p[4]),
                z=float(p[5]),
                yaw=float(p[6]),
                ux=float(p[7]),
                uy=float(p[8]),
                rotation=float(p[9]),
                stopped=p[10] == "1",
                pose_rot_err=float(p[11]),
                pose_dir_err=float(p[12]),
                formation_error=float(p[13]),
                min_pair_distance=float(p[14]),
            )
        )
    return log


def write_summary_csv(summary: RunSummary, path) -> None:
    lines = ["key,value"]
    for k, v in summary.lines():
        lines.append(f"{k},{_fmt(v)}")
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def write_trajectory_svg(log: TrajectoryLog, spec: FormationSpec | None, path) -> None:
    """Top-down plot: one polyline per agent, sensing edges at the start pose."""
    width, height = 640, 640
    margin = 40.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    agents = log.agents()
    if agents:
        xs = np.array([r.x for r in log.rows])
        ys = np.array([r.y for r in log.rows])
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        span = max(x1 - x0, y1 - y0, 1e-6)
        sc = (width - 2 * margin) / span

        def to_px(x: float, y: float) -> tuple[float, float]:
            return (
                margin + (x - x0) * sc,
                height - margin - (y - y0) * sc,  # y up
            )

        by_agent: dict[int, list[StepAgentRow]] = {a: [] for a in agents}
        for r in log.rows:
            by_agent[r.agent].append(r)
        starts = {a: (rows[0].x, rows[0].y) for a, rows in by_agent.items()}
        if spec is not None and spec.n == len(agents):
            for i in range(spec.n):
                for j in range(i + 1, spec.n):
                    if spec.adjacency[i, j]:
                        xa, ya = to_px(*starts[agents[i]])
                        xb, yb = to_px(*starts[agents[j]])
                        parts.append(
                            f'<line x1="{xa:.2f}" y1="{ya:.2f}" x2="{xb:.2f}" y2="{yb:.2f}" '
                            'stroke="#bbbbbb" stroke-width="1"/>'
                        )
        for k, a in enumerate(agents):
            color = _PALETTE[k % len(_PALETTE)]
            pts = " ".join(
                "{:.2f},{:.2f}".format(*to_px(r.x, r.y)) for r in by_agent[a]
            )
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
            sx, sy = to_px(*starts[a])
            ex, ey = to_px(by_agent[a][-1].x, by_agent[a][-1].y)
            parts.append(
                f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="4" fill="none" stroke="{color}"/>'
            )
            parts.append(f'<circle cx="{ex:.2f}" cy="{ey:.2f}" r="4" fill="{color}"/>')
    parts.append("</svg>")
    Path(path).write_bytes(("\n".join(parts) + "\n").encode("ascii"))


def emit_outputs(log: TrajectoryLog, summary: RunSummary, outdir, spec: FormationSpec | None = None) -> dict[str, Path]:
    """Write trajectory.csv, summary.csv and trajectory.svg into outdir."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "trajectory": out / "trajectory.csv",
            "summary": out / "summary.csv",
            "plot": out / "trajectory.svg",
        }
        write_trajectory_csv(log, files["trajectory"])
        write_summary_csv(summary, files["summary"])
        write_trajectory_svg(log, spec, files["plot"])
    except OSError as exc:
        raise OSError(f"cannot write outputs under {out}: {exc}") from exc
    return files
