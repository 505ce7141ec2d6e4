"""Command line pipeline: generate, slam, improve and metrics, composed via files.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from treeslam import io, sim
from treeslam.chain import Chain, frame_weights, remove_worst_frames, run_initial_slam
from treeslam.config import PipelineConfig, format_config, load_config
from treeslam.errors import DataError, NumericalError
from treeslam.pairs import run_improvement
from treeslam.quality import build_map, cell_dump, cluster_map, default_scales, measure

log = logging.getLogger("treeslam")

FRAMES = "frames.txt"
TRUTH = "truth.txt"
ODOMETRY = "odometry.txt"
POSES = "poses.txt"
IMPROVED = "improved.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _out_dir(path: str) -> Path:
    out = Path(path)
    if not out.is_dir():
        raise DataError(f"output directory {out} does not exist")
    return out


def _write_config(out: Path, cfg: PipelineConfig) -> None:
    (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")


def cmd_generate(cfg: PipelineConfig, out: Path) -> None:
    """Forest, ground-truth path, frames and a drifted odometry chain."""
    trees = sim.generate_forest(cfg.forest_spec)
    poses = sim.simulate_path(cfg.path.waypoints, cfg.path.n_frames, cfg.path.jitter, cfg.seed)
    frames = sim.scan_path(trees, poses, cfg.scan, cfg.seed)
    truth = sim.ground_truth_chain(poses)
    odometry = sim.perturb_odometry(truth, cfg.drift.step_rot_bias, cfg.drift.step_trans_noise, cfg.seed)
    io.write_frames(out / FRAMES, frames)
    io.write_poses(out / TRUTH, truth.totals)
    io.write_poses(out / ODOMETRY, odometry.totals)
    io.write_table(out / "trees.txt", trees)
    manifest = [
        f"seed {cfg.seed}",
        f"trees {len(trees)}",
        f"frames {len(frames)}",
        f"points {sum(len(f) for f in frames)}",
        f"files {FRAMES} {TRUTH} {ODOMETRY} trees.txt",
    ]
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    log.info("generated %d trees, %d frames", len(trees), len(frames))


def cmd_slam(cfg: PipelineConfig, frames_file: Path, out: Path) -> Chain:
    frames = io.read_frames(frames_file, cfg.scan.cone)
    chain = run_initial_slam(frames, cfg.slam.outlier_ratio, cfg.slam.max_iter, cfg.slam.tol)
    io.write_chain(out, chain, Path(POSES).stem)
    for k, e in enumerate(chain.step_errors, start=1):
        log.debug("step %d error %.4f", k, e)
    return chain


def cmd_improve(cfg: PipelineConfig, frames_file: Path, pose_file: Path, out: Path) -> Chain:
    chain = io.read_chain(pose_file)
    frames = io.read_frames(frames_file, cfg.scan.cone, len(chain))
    imp = cfg.improve
    chain, records = run_improvement(
        chain, frames, cfg.selection_config, cfg.bnb.resolve(), imp.strategy, imp.rounds,
        imp.rule, imp.a, imp.b, cfg.run.threads,
    )
    if not records or not records[0].selected:
        log.warning("no candidate pairs; the chain is written unchanged")
    io.write_chain(out, chain, Path(IMPROVED).stem)
    io.write_corrections(out / "corrections.txt", chain.log)
    io.write_pairs(out / "pairs.txt", [p for r in records for p in r.selected])
    outcomes = [o for r in records for o in r.stats.outcomes]
    betas = [b for r in records for b in r.stats.beta_trace]
    with open(out / "outcomes.txt", "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(
                f"{o.round} {o.j} {o.i} {io.fmt(o.overlap)} {io.fmt(o.error_before)} "
                f"{io.fmt(o.error_after)} {o.method} {int(o.applied)} {o.note or '-'}\n"
            )
    (out / "beta_trace.txt").write_text("".join(f"{io.fmt(b)}\n" for b in betas), encoding="utf-8")
    counts = {"icp": 0, "go_icp": 0}
    summary = [f"strategy {imp.strategy}", f"rounds {len(records)}"]
    for k, r in enumerate(records):
        counts = {m: counts[m] + r.stats.method_counts[m] for m in counts}
        summary.append(
            f"round {k} candidates {r.candidates} selected {len(r.selected)} "
            f"applied {r.stats.applied} stopped_early {int(r.stats.stopped_early)}"
        )
    summary += [f"calls icp {counts['icp']} go_icp {counts['go_icp']}", f"corrections {len(chain.log)}"]
    if betas:
        summary.append(f"beta initial {io.fmt(betas[0])} final {io.fmt(betas[-1])}")
    (out / "stats.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    # wall-clock times vary run to run, so they live apart from the reproducible outputs
    with open(out / "timings.txt", "w", encoding="utf-8") as fh:
        for method in ("icp", "go_icp"):
            times = [t for r in records for t in r.stats.timings[method]]
            fh.write(f"{method} calls {len(times)} total {sum(times):.3f} mean {np.mean(times) if times else 0.0:.4f}\n")
    log.info("applied %d corrections over %d rounds", len(chain.log), len(records))
    return chain


def cmd_metrics(cfg: PipelineConfig, frames_file: Path, pose_file: Path, out: Path, dimension: bool = False) -> str:
    chain = io.read_chain(pose_file)
    frames = io.read_frames(frames_file, cfg.scan.cone, len(chain))
    mc = cfg.metrics
    fused = build_map(frames, chain)
    scales = default_scales(fused) if dimension or mc.dimension else None
    report = measure(fused, mc.eps_fine, mc.eps_coarse, mc.r_alpha, mc.min_points, scales)
    line = report.format()
    (out / "metrics.txt").write_text(line + "\n", encoding="utf-8")
    io.write_table(out / "cells.txt", cell_dump(fused, mc.eps_fine), int_columns=(2,))
    weights = frame_weights(cluster_map(fused, mc.r_alpha, mc.min_points), len(frames))
    io.write_table(out / "weights.txt", np.column_stack([np.arange(len(weights)), weights]), int_columns=(0,))
    if mc.worst_frames > 0:
        worst = sorted(remove_worst_frames(weights, mc.worst_frames))
        (out / "worst_frames.txt").write_text("".join(f"{k}\n" for k in worst), encoding="utf-8")
    return line


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="section.key = value config file")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--threads", type=int, help="worker threads; 1 is the reference mode")
    common.add_argument("--out", required=True, help="existing output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="treeslam", description="Self-corrective SLAM for sparse landmark clouds")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="simulate a forest, path and scans")
    slam = sub.add_parser("slam", parents=[common], help="sequential ICP chain from frames")
    slam.add_argument("frames")
    for name, text in (("improve", "select extra pairs and correct the chain"), ("metrics", "map quality report")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("frames")
        p.add_argument("poses")
    sub.choices["metrics"].add_argument("--dimension", action="store_true", help="add the box-counting fit")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"treeslam: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).with_run(args.seed, args.threads)
        out = _out_dir(args.out)
        _write_config(out, cfg)
        if args.command == "generate":
            cmd_generate(cfg, out)
        elif args.command == "slam":
            cmd_slam(cfg, Path(args.frames), out)
        elif args.command == "improve":
            cmd_improve(cfg, Path(args.frames), Path(args.poses), out)
        else:
            print(cmd_metrics(cfg, Path(args.frames), Path(args.poses), out, args.dimension))
    except (DataError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    except NumericalError as exc:
        log.error("%s", exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
