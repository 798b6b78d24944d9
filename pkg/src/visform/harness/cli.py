"""Command-line entry points: gain design, simulation, pose estimation, benchmarks."""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="visform",
        description="Vision-based distributed formation control simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gains = sub.add_parser("design-gains", help="design and verify gain blocks for a scenario")
    p_gains.add_argument("config", help="scenario file or shipped scenario name")
    p_gains.add_argument("--out", default=None, help="gain matrix file (default: <config>.gains.txt)")

    p_sim = sub.add_parser("simulate", help="run a scenario and write CSV/SVG outputs")
    p_sim.add_argument("config", help="scenario file or shipped scenario name")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override the master seed")
    p_sim.add_argument("--perception", choices=("vision", "oracle"), default=None)

    p_pose = sub.add_parser("estimate-pose", help="estimate a relative pose from a correspondence CSV")
    p_pose.add_argument("csv", help="rows mx,my,nx,ny (homogeneous third component implied)")
    p_pose.add_argument("--threshold", type=float, default=1e-4)
    p_pose.add_argument("--confidence", type=float, default=0.999)
    p_pose.add_argument("--max-iterations", type=int, default=500)
    p_pose.add_argument("--seed", type=int, default=0)

    p_bench = sub.add_parser("bench-pose", help="Monte Carlo accuracy/timing benchmark")
    p_bench.add_argument("--trials", type=int, default=50)
    p_bench.add_argument("--noise", type=float, action="append", default=None,
                         help="pixel noise level; repeat for a table (default: 0 and 1)")
    p_bench.add_argument("--points", type=int, default=100)
    p_bench.add_argument("--backend", choices=("auto", "compiled", "python", "both"), default="auto")
    p_bench.add_argument("--out", default=None, help="write the table as CSV instead of stdout")
    p_bench.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        if args.command == "design-gains":
            return _cmd_design_gains(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "estimate-pose":
            return _cmd_estimate_pose(args)
        if args.command == "bench-pose":
            return _cmd_bench_pose(args)
    except (ValueError, OSError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _cmd_design_gains(args) -> int:
    from ..gains import design_gains, save_gains, verify_gains
    from .config import load_config, resolve_scenario

    cfg = load_config(args.config)
    spec = cfg.formation.to_spec()
    gains = design_gains(spec)
    report = verify_gains(gains, spec)
    out = Path(args.out) if args.out else resolve_scenario(args.config).with_suffix(".gains.txt")
    save_gains(gains, report, out)
    print(f"wrote {out}")
    print(report.summary())
    return 0 if report.ok else 1


def _cmd_simulate(args) -> int:
    from .config import load_config
    from .outputs import emit_outputs
    from .sim import run_simulation

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.perception is not None:
        cfg = replace(cfg, control=replace(cfg.control, perception=args.perception))
    log, summary = run_simulation(cfg)
    files = emit_outputs(log, summary, args.out, cfg.formation.to_spec())
    for k, v in summary.lines():
        print(f"{k}: {v}")
    print(f"outputs: {files['trajectory'].parent}")
    return 0


def _cmd_estimate_pose(args) -> int:
    from ..pose import Correspondence, RansacParams, ransac_pose

    rows = []
    text = Path(args.csv).read_text(encoding="utf-8")
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.lower().startswith("mx"):
            continue
        vals = [float(x) for x in ln.replace(";", ",").split(",")]
        if len(vals) != 4:
            raise ValueError(f"expected 4 columns mx,my,nx,ny, got {ln!r}")
        rows.append(vals)
    cs = [Correspondence((mx, my, 1.0), (nx, ny, 1.0)) for mx, my, nx, ny in rows]
    params = RansacParams(
        threshold=args.threshold,
        confidence=args.confidence,
        max_iterations=args.max_iterations,
        seed=args.seed,
    )
    result = ransac_pose(cs, params)
    q = result.best.quaternion
    t = result.best.translation
    print(f"quaternion (w x y z): {q.w:.12g} {q.x:.12g} {q.y:.12g} {q.z:.12g}")
    print(f"translation direction: {t[0]:.12g} {t[1]:.12g} {t[2]:.12g}")
    print(f"inliers: {int(result.inlier_mask.sum())} / {len(cs)}")
    print(f"iterations: {result.iterations}")
    return 0


def _bench_one(backend: str, noises, trials: int, points: int, seed: int):
    from ..pose import RansacParams, ransac_pose
    from ..pose._backend import temporary_backend
    from ..pose.synthetic import random_scene

    rows = []
    with temporary_backend(backend):
        for sigma in noises:
            rot, direc, times = [], [], []
            threshold = 1e-4 if sigma == 0 else 2.0 / 250.0
            for k in range(trials):
                sc = random_scene(seed + 1000 * k, n_points=points, noise_px=sigma)
                t0 = time.perf_counter()
                rr = ransac_pose(sc.correspondences, RansacParams(threshold=threshold, seed=seed + k))
                times.append(time.perf_counter() - t0)
                rot.append(np.degrees(sc.rotation_error(rr.best.quaternion)))
                direc.append(np.degrees(sc.direction_error(rr.best.translation)))
            rows.append(
                {
                    "backend": backend,
                    "noise_px": sigma,
                    "trials": trials,
                    "median_rot_err_deg": float(np.median(rot)),
                    "median_dir_err_deg": float(np.median(direc)),
                    "mean_solve_ms": float(np.mean(times) * 1e3),
                }
            )
    return rows


def _cmd_bench_pose(args) -> int:
    from ..pose._backend import COMPILED, available_backends

    noises = args.noise if args.noise else [0.0, 1.0]
    if args.backend == "auto":
        backends = ["compiled" if COMPILED else "python"]
    elif args.backend == "both":
        backends = available_backends()
        if len(backends) == 1:
            print("note: compiled backend unavailable, benchmarking python only", file=sys.stderr)
    else:
        backends = [args.backend]

    rows = []
    for b in backends:
        rows.extend(_bench_one(b, noises, args.trials, args.points, args.seed))
    header = ["backend", "noise_px", "trials", "median_rot_err_deg", "median_dir_err_deg", "mean_solve_ms"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(r[k]) for k in header))
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table, encoding="ascii")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(table)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
