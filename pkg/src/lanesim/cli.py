"""Command-line interface.

Subcommands: build-pool, sample, train, eval, rollout, synth-map.  Successful
runs exit 0; failures print one machine-readable JSON error line to stderr
and exit nonzero.
"""

import argparse
import glob
import json
import os
import sys

import numpy as np
import yaml


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except BrokenPipeError:
        raise
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}
        ) + "\n")
        return 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lanesim",
        description="Self-play highway traffic simulation: scenario pools, "
                    "world sampling, training, evaluation, and trace export.",
    )
    sub = parser.add_subparsers(required=True, metavar="command")

    p = sub.add_parser("build-pool", help="build an offline start-goal pool")
    p.add_argument("--map", required=True)
    p.add_argument("--params", required=True, help="JSON/YAML file of generator parameters")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_pool)

    p = sub.add_parser("sample", help="sample scenario files from a pool")
    p.add_argument("--pool", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--horizon", type=float, required=True, help="episode horizon [s]")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--map", default=None, help="override the map path stored in the pool")
    p.add_argument("--dt", type=float, default=0.1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="run self-play training")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a scenario set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenarios", required=True, help="directory of scenario JSON files")
    p.add_argument("--mode", choices=["greedy", "sample", "replay"], default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.add_argument("--alpha", default=None, help="'random:<seed>' resamples alpha per agent")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="roll out one scenario and export traces")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="output path prefix (.csv/.svg)")
    p.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("synth-map", help="write a synthetic straight-highway map")
    p.add_argument("--lanes", type=int, default=3)
    p.add_argument("--length", type=float, default=400.0)
    p.add_argument("--lane-width", type=float, default=3.5)
    p.add_argument("--map-id", default="straight")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_map)
    return parser


def cmd_build_pool(args):
    from .maps import build_lane_graph, load_map
    from .scenario import GeneratorParams, build_pool, save_pool

    with open(args.params) as f:
        params = GeneratorParams(**(yaml.safe_load(f) or {}))
    bundle = load_map(args.map)
    graph = build_lane_graph(bundle)
    pool = build_pool(graph, params, seed=args.seed)
    pool.map_path = args.map
    save_pool(pool, args.out)
    print("wrote pool with %d entries (%.1f%% lane-change) to %s" % (
        len(pool), 100.0 * len(pool.lane_change) / len(pool), args.out))


def cmd_sample(args):
    from .maps import build_lane_graph, load_map, save_map
    from .scenario import load_pool, sample_world, save_scenario

    pool = load_pool(args.pool)
    map_path = args.map or pool.map_path
    if not map_path:
        raise ValueError("pool stores no map path; pass --map")
    bundle = load_map(map_path)
    pool.attach_graph(build_lane_graph(bundle))
    os.makedirs(args.out_dir, exist_ok=True)
    local_map = os.path.join(args.out_dir, "map.json")
    save_map(bundle, local_map)
    rng = np.random.default_rng(args.seed)
    for i in range(args.n):
        spec = sample_world(pool, pool.params, args.horizon, int(rng.integers(2**31 - 1)), dt=args.dt)
        save_scenario(spec, os.path.join(args.out_dir, "scenario_%04d.json" % i),
                      map_path="map.json")
    print("wrote %d scenarios to %s" % (args.n, args.out_dir))


def cmd_train(args):
    from .config import build_sampler, load_run_config, net_config_for
    from .plots import render_training_curves
    from .training import train

    run = load_run_config(args.config)
    sampler = build_sampler(run)
    net_cfg = net_config_for(run)
    _, rows = train(run.train, net_cfg, run.obs, run.rewards, sampler,
                    args.out_dir, ramp=run.ramp)
    render_training_curves(rows, os.path.join(args.out_dir, "training_curves.png"))
    print("finished %d iterations; wrote %s" % (len(rows), args.out_dir))


def cmd_eval(args):
    from .metrics import PolicyRunner, evaluate

    paths = sorted(glob.glob(os.path.join(args.scenarios, "*.json")))
    paths = [p for p in paths if not p.endswith("map.json")]
    if not paths:
        raise ValueError("no scenario files under %s" % args.scenarios)
    runner = PolicyRunner.from_checkpoint(args.checkpoint)
    alpha_rng = None
    if args.alpha:
        if not args.alpha.startswith("random:"):
            raise ValueError("--alpha expects 'random:<seed>'")
        alpha_rng = np.random.default_rng(int(args.alpha.split(":", 1)[1]))
    report = evaluate(runner, paths, mode=args.mode, seed=args.seed,
                      report_path=args.report, alpha_rng=alpha_rng)
    print(json.dumps(report.to_dict(), sort_keys=True))


def cmd_rollout(args):
    from .metrics import PolicyRunner, export_rollout

    runner = PolicyRunner.from_checkpoint(args.checkpoint)
    csv_path, svg_path = export_rollout(runner, args.scenario, args.out,
                                        mode=args.mode, seed=args.seed)
    print("wrote %s and %s" % (csv_path, svg_path))


def cmd_synth_map(args):
    from .maps import save_map
    from .synthetic import straight_map

    bundle = straight_map(n_lanes=args.lanes, length=args.length,
                          lane_width=args.lane_width, map_id=args.map_id)
    save_map(bundle, args.out)
    print("wrote %d-lane %.0f m map to %s" % (args.lanes, args.length, args.out))


if __name__ == "__main__":
    sys.exit(main())
