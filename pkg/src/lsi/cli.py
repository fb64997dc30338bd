"""Command-line front end: run, heatmap, extract, simulate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .archive import MapConfig, preset
from .harness import (
    extract_scenes,
    export_heatmap,
    load_experiment_config,
    make_decoder,
    run_experiment,
)
from .sim import (
    EVENT_ORDER,
    NODE_BUDGET,
    NoSpawnSurface,
    astar_play,
    initial_state,
    step,
)
from .tiles import parse_scene


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsi",
        description="Illuminate a scene generator's latent space.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a configured experiment sweep")
    p.add_argument("config", help="experiment INI file")

    p = sub.add_parser("heatmap", help="render an archive CSV as a heatmap")
    p.add_argument("archive_csv")
    p.add_argument("-o", "--out", required=True,
                   help="output basename; .csv and .ppm are written")
    geom = p.add_mutually_exclusive_group()
    geom.add_argument("--map", default="representation",
                      help="map preset the archive was built with")
    geom.add_argument("--bins", help="explicit 2-D geometry as N,M")

    p = sub.add_parser("extract", help="re-decode selected elites to scenes")
    p.add_argument("archive_csv")
    p.add_argument("--select", default="extremes",
                   help='"extremes", "uniform-K", or cells "i,j;i,j"')
    p.add_argument("--generator", default="synthetic",
                   help='"synthetic" or a weights-file path')
    p.add_argument("--map", default="representation")
    p.add_argument("-o", "--out", default="scenes")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("simulate", help="play one scene and report the outcome")
    p.add_argument("scene", help="scene text file")
    p.add_argument("--budget", type=int, default=NODE_BUDGET,
                   help="A* node budget")
    p.add_argument("--trace", help="write a per-tick JSONL trace here")
    return parser


def _map_config(args) -> MapConfig:
    if getattr(args, "bins", None):
        n, m = (int(v) for v in args.bins.split(","))
        # bounds are irrelevant for plotting: cells are already assigned
        return MapConfig("custom", ((0.0, 1.0, n), (0.0, 1.0, m)))
    return preset(args.map)


def _parse_selection(text: str):
    if text == "extremes" or text.startswith("uniform-"):
        return text
    cells = []
    for chunk in text.split(";"):
        cells.append(tuple(int(v) for v in chunk.split(",")))
    return cells


def _cmd_run(args) -> int:
    cfg = load_experiment_config(args.config)
    report = run_experiment(cfg)
    print(f"wrote {report.output}")
    for r in report.rows:
        print(f"{r.algorithm:8s} trials {r.trials}  "
              f"coverage {r.coverage_mean:.4f} +- {r.coverage_ci95:.4f}  "
              f"qd {r.qd_score_mean:.1f} +- {r.qd_score_ci95:.1f}  "
              f"valid/all {r.valid_all_mean:.4f} +- {r.valid_all_ci95:.4f}  "
              f"valid/found {r.valid_found_mean:.4f} +- {r.valid_found_ci95:.4f}")
    return 0


def _cmd_heatmap(args) -> int:
    csv_path, ppm_path = export_heatmap(args.archive_csv, args.out,
                                        _map_config(args))
    print(f"wrote {csv_path}")
    print(f"wrote {ppm_path}")
    return 0


def _cmd_extract(args) -> int:
    decoder = make_decoder(args.generator)
    written = extract_scenes(args.archive_csv, _map_config(args), decoder,
                             _parse_selection(args.select), args.out,
                             seed=args.seed)
    for path in written:
        print(f"wrote {path}")
    print(f"wrote {Path(args.out) / 'manifest.csv'}")
    return 0


def _write_trace(path, grid, actions) -> None:
    state = initial_state(grid)
    with open(path, "w", encoding="utf-8") as fh:
        for action in actions:
            state = step(state, action)
            fh.write(json.dumps({
                "tick": state.tick,
                "action": action,
                "row": state.row,
                "col": state.col,
                "power": state.power_name,
                "airborne": state.airborne,
                "events": sorted(state.events),
                "dead": state.dead,
                "success": state.success,
            }) + "\n")


def _cmd_simulate(args) -> int:
    grid = parse_scene(Path(args.scene).read_text())
    try:
        trace = astar_play(grid, node_budget=args.budget)
    except NoSpawnSurface:
        print("no spawn surface: completion 0.0")
        return 1
    print(f"completion {trace.completion:.4f}")
    print(f"success {trace.success}")
    print(f"steps {trace.steps}")
    print(f"max_col {trace.max_col}")
    hit = [name for name in EVENT_ORDER if name in trace.events]
    print("events " + (",".join(hit) if hit else "(none)"))
    if args.trace:
        _write_trace(args.trace, grid, trace.actions)
        print(f"wrote {args.trace}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "heatmap": _cmd_heatmap,
    "extract": _cmd_extract,
    "simulate": _cmd_simulate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
