"""``gormkit`` command line.

Exit codes: 0 success, 1 usage or config error, 2 data or format error,
3 empty candidate distribution.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as mapio
from .config import ConfigError, RunConfig, load_config
from .gorm import EmptyDistribution, build_gorm
from .rmap import build_rm, query_index, query_reachable
from .sim import (
    Outcome,
    run_benchmark,
    run_episode,
    sample_target,
    scenario_environment,
    workspace_hull,
)
from .transforms import Pose

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EMPTY = 0, 1, 2, 3

log = logging.getLogger("gormkit")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML run configuration (defaults when omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker threads for parallel kernels")
    p.add_argument("--out", help="output path")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="gormkit", description="Reachability maps and base-placement planning.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("build-rm", parents=[common], help="build a reachability map")

    p = sub.add_parser("invert", parents=[common], help="invert a map into base-pose candidates")
    p.add_argument("--map", required=True)

    p = sub.add_parser("query", parents=[common], help="reachability at a pose in the arm-base frame")
    p.add_argument("--map", required=True)
    p.add_argument("--xyz", type=float, nargs=3, required=True)
    p.add_argument("--rpy", type=float, nargs=3)

    p = sub.add_parser("plan", parents=[common], help="run one tracking episode")
    p.add_argument("--map", required=True)
    p.add_argument("--target", type=float, nargs="+", metavar="V",
                   help="x y z [roll pitch yaw] of the grasp; omitted parts are sampled")
    p.add_argument("--gorm-out", help="also write the candidate distribution")

    p = sub.add_parser("bench", parents=[common], help="height benchmark")
    p.add_argument("--map", required=True)
    p.add_argument("--heights", type=float, nargs="+")
    p.add_argument("--trials", type=int)
    p.add_argument("--naive", action="store_true", help="add fixed-standoff baseline rows")

    p = sub.add_parser("workspace", parents=[common], help="arm vs whole-body workspace hulls")
    p.add_argument("--map", required=True)
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be >= 0")
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def _load_map(args, cfg: RunConfig):
    try:
        rm = mapio.load_map(args.map)
    except OSError as exc:
        raise DataError(f"cannot read map {args.map}: {exc.strerror}") from None
    arm = cfg.build_arm()
    if rm.arm_hash != arm.digest:
        raise DataError(
            "map was built for a different arm: "
            f"map hash {rm.arm_hash.hex()}, config hash {arm.digest.hex()}"
        )
    return arm, rm


def _need_out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_build_rm(args) -> int:
    cfg = _config(args)
    arm = cfg.build_arm()
    grid, orient = cfg.grid_spec(), cfg.orientation_set()
    t0 = time.perf_counter()
    rm = build_rm(arm, grid, orient, cfg.ik_params(), cfg.ik.seeds_per_pose, cfg.seed)
    dt = time.perf_counter() - t0
    out = _need_out(args, "rm.gorm")
    mapio.save_map(out, rm)
    nz = rm.index[rm.index > 0]
    print(json.dumps({
        "out": str(out),
        "voxels": grid.n_voxels,
        "orientations": len(orient),
        "reachable_voxels": int(nz.size),
        "set_bits": rm.n_set,
        "mean_index": float(rm.index.mean()),
        "mean_index_reachable": float(nz.mean()) if nz.size else 0.0,
        "build_seconds": round(dt, 3),
        "arm_hash": rm.arm_hash.hex(),
    }))
    return EXIT_OK


def cmd_invert(args) -> int:
    cfg = _config(args)
    arm, rm = _load_map(args, cfg)
    orm = cfg.orm_for(rm, arm)
    out = _need_out(args, "orm.gorm")
    mapio.save_orm(out, orm, mapio.MapHeader.for_map(rm))
    print(json.dumps({"out": str(out), "entries": len(orm), "set_bits": rm.n_set}))
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = _config(args)
    _, rm = _load_map(args, cfg)
    res = {"xyz": args.xyz, "index": query_index(rm, args.xyz)}
    if args.rpy is not None:
        res["rpy"] = args.rpy
        res["reachable"] = query_reachable(rm, Pose.from_xyz_rpy(args.xyz, args.rpy))
    print(json.dumps(res))
    return EXIT_OK


def _target(values, cfg: RunConfig) -> Optional[Pose]:
    """Grasp pose from ``--target``; a bare position takes the seeded sampled orientation."""
    if values is None:
        return None
    if len(values) not in (3, 6):
        raise UsageError("--target takes x y z or x y z roll pitch yaw")
    if len(values) == 6:
        return Pose.from_xyz_rpy(values[:3], values[3:])
    sampled = sample_target(cfg.scenario_model(), np.random.default_rng(cfg.seed))
    return Pose(values[:3], sampled.rotation)


def cmd_plan(args) -> int:
    cfg = _config(args)
    target = _target(args.target, cfg)
    arm, rm = _load_map(args, cfg)
    orm = cfg.orm_for(rm, arm)
    sc = cfg.scenario_model()
    if target is not None:
        sc = cfg.scenario_model(target_height=float(target.translation[2]) - cfg.scenario.grasp_z_offset)
    res = run_episode(sc, arm, rm, orm, cfg.planner_params(), cfg.locomotion_limits(),
                      cfg.gorm.reach_threshold, cfg.command_ranges(), target=target)
    print(f"{'step':>5} {'d_min':>10} {'r_gorm':>10} {'reach':>8}")
    for e in res.trajectory:
        print(f"{e.step:5d} {e.d_min:10.4f} {e.reward:10.6f} {e.reachability:8.4f}")
    print(f"outcome {res.outcome.value} switch_step {res.switch_step} "
          f"final_reachability {res.final_reachability:.4f} candidates {res.n_candidates}")
    out = _need_out(args, "episode.json")
    mapio.atomic_write(out, json.dumps(res.to_dict(), indent=1).encode())
    if args.gorm_out and res.outcome is not Outcome.EMPTY:
        g = build_gorm(orm, res.target, cfg.locomotion_limits(),
                       scenario_environment(sc, res.target), cfg.gorm.reach_threshold,
                       res.start.translation[:2])
        mapio.save_gorm(args.gorm_out, g, mapio.MapHeader.for_map(rm))
    return EXIT_EMPTY if res.outcome is Outcome.EMPTY else EXIT_OK


BENCH_COLUMNS = ("height_m", "mode", "trials", "mean_reachability", "switch_rate", "mean_steps")


def bench_csv(rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in rows:
        w.writerow([repr(getattr(r, c)) if isinstance(getattr(r, c), float) else getattr(r, c)
                    for c in BENCH_COLUMNS])
    return buf.getvalue()


def cmd_bench(args) -> int:
    cfg = _config(args)
    heights = args.heights or cfg.bench.heights
    trials = args.trials if args.trials is not None else cfg.bench.trials
    if trials < 1:
        raise UsageError("--trials must be >= 1")
    arm, rm = _load_map(args, cfg)
    orm = cfg.orm_for(rm, arm)
    common = dict(params=cfg.planner_params(), limits=cfg.locomotion_limits(),
                  reach_threshold=cfg.gorm.reach_threshold, ranges=cfg.command_ranges())
    sc = cfg.scenario_model()
    rows, _ = run_benchmark(heights, trials, sc, arm, rm, orm, **common)
    if args.naive:
        naive_rows, _ = run_benchmark(heights, trials, sc, arm, rm, orm, naive=True, **common)
        rows = rows + naive_rows
    out = _need_out(args, "bench.csv")
    text = bench_csv(rows)
    mapio.atomic_write(out, text.encode())
    mapio.atomic_write(out.with_suffix(".json"),
                       json.dumps([asdict(r) for r in rows], indent=1).encode())
    sys.stdout.write(text)
    return EXIT_OK


def cmd_workspace(args) -> int:
    cfg = _config(args)
    arm, rm = _load_map(args, cfg)
    res = workspace_hull(arm, rm, cfg.locomotion_limits(), cfg.workspace.index_threshold)
    text = json.dumps(res)
    if args.out:
        mapio.atomic_write(Path(args.out), text.encode())
    print(text)
    return EXIT_OK


COMMANDS = {
    "build-rm": cmd_build_rm,
    "invert": cmd_invert,
    "query": cmd_query,
    "plan": cmd_plan,
    "bench": cmd_bench,
    "workspace": cmd_workspace,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("gormkit: error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        import numba

        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"gormkit: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except mapio.MapFormatError as exc:
        print(f"gormkit: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"gormkit: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EmptyDistribution as exc:
        print(f"gormkit: no base-pose candidates: {exc}", file=sys.stderr)
        return EXIT_EMPTY


if __name__ == "__main__":
    sys.exit(main())
