"""Command-line entry point: ``plvo run | synth | eval | plot-data``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..exceptions import PLVOError
from ..odometry import OdometryConfig, run_sequence
from ..residuals import MODES
from .io import (
    apply_overrides,
    load_calibration,
    load_features,
    read_config,
    read_trajectory,
    write_trajectory,
)
from .metrics import Trajectory, ape, rpe
from .synthetic import SyntheticSceneConfig, generate_synthetic, scene_config_from_dict, write_synthetic

log = logging.getLogger("plvo")


def _run(args):
    cam = load_calibration(args.calib)
    overrides = read_config(args.config) if args.config else {}
    cfg = apply_overrides(OdometryConfig, overrides)
    if args.mode is not None:
        cfg.mode = args.mode
    if args.dynamic_grid is not None:
        cfg.dynamic_grid = args.dynamic_grid == "on"
    if args.rho is not None:
        cfg.rho = args.rho
    cfg = OdometryConfig(**vars(cfg))  # re-validate after command-line overrides

    frames, skipped = load_features(args.features, cam)
    state = run_sequence(frames, cam, cfg)
    write_trajectory(Trajectory(state.frame_ids, state.trajectory), args.output, args.format)

    if args.diagnostics:
        totals = {}
        for s in state.stats:
            for k, v in s.exclusions.items():
                totals[k] = totals.get(k, 0) + v
        totals["out_of_bounds"] = totals.get("out_of_bounds", 0) + skipped
        lines = [s.diagnostics_line() for s in state.stats]
        lines.append("# exclusions " + " ".join(f"{k}={v}" for k, v in sorted(totals.items())))
        Path(args.diagnostics).write_text("\n".join(lines) + "\n")
    if args.masks:
        rows = []
        for s in state.stats:
            if s.mask is not None:
                rows.extend(s.mask.to_lines(s.frame_id))
        Path(args.masks).write_text("".join(r + "\n" for r in rows))
    return 0


def _synth(args):
    cfg = scene_config_from_dict(read_config(args.scene_config)) if args.scene_config else SyntheticSceneConfig()
    paths = write_synthetic(generate_synthetic(cfg), args.out_dir)
    for name, path in paths.items():
        print(f"{name} {path}")
    return 0


def _eval(args):
    gt = read_trajectory(args.gt, args.format)
    est = read_trajectory(args.est, args.format)
    if args.metric == "ape":
        t, r = ape(gt, est, align=args.align)
    else:
        t, r = rpe(gt, est, delta=args.delta)
    print(f"{args.metric}_trans_rmse {t:.6f}")
    print(f"{args.metric}_rot_rmse {r:.6f}")
    return 0


def _plot_data(args):
    traj = read_trajectory(args.trajectory, args.format)
    out = [f"{i} {p.t[0]:.6f} {p.t[2]:.6f}" for i, p in zip(traj.frame_ids, traj.poses)]
    text = "\n".join(out) + ("\n" if out else "")
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="plvo", description="Point-and-line stereo visual odometry.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="estimate a trajectory from a feature file")
    run.add_argument("--calib", required=True)
    run.add_argument("--features", required=True)
    run.add_argument("--output", required=True)
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--dynamic-grid", choices=("on", "off"))
    run.add_argument("--rho", type=float)
    run.add_argument("--config", help="key = value overrides of the pipeline defaults")
    run.add_argument("--format", choices=("kitti", "tum"), default="kitti")
    run.add_argument("--diagnostics", help="per-frame 'frame_id n_pts n_lines n_dyn_removed iters cost' lines")
    run.add_argument("--masks", help="flagged cells as 'frame_id a b' lines")
    run.set_defaults(func=_run)

    synth = sub.add_parser("synth", help="generate a synthetic stereo sequence")
    synth.add_argument("--scene-config")
    synth.add_argument("--out-dir", required=True)
    synth.set_defaults(func=_synth)

    ev = sub.add_parser("eval", help="APE or RPE between two trajectories")
    ev.add_argument("--gt", required=True)
    ev.add_argument("--est", required=True)
    ev.add_argument("--metric", choices=("ape", "rpe"), default="ape")
    ev.add_argument("--delta", type=int, default=1)
    ev.add_argument("--align", action="store_true")
    ev.add_argument("--format", choices=("kitti", "tum"), default="kitti")
    ev.set_defaults(func=_eval)

    plot = sub.add_parser("plot-data", help="print 'frame_id x z' columns of a trajectory")
    plot.add_argument("--trajectory", required=True)
    plot.add_argument("--format", choices=("kitti", "tum"), default="kitti")
    plot.add_argument("--output")
    plot.set_defaults(func=_plot_data)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PLVOError, OSError, ValueError) as exc:
        print(f"plvo: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
