#!/usr/bin/env python3
"""Run the desk-scale algorithm comparison end to end.

Reads configs/desk.ini (or the .ini named on the command line), runs all
trials sequentially, prints the summary table, and renders a fitness
heatmap from each algorithm's first-trial archive. Expect roughly a
quarter hour at the default settings on one core.
"""

import argparse
from pathlib import Path

from lsi.harness import export_heatmap, load_experiment_config, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default="configs/desk.ini")
    args = ap.parse_args()

    cfg = load_experiment_config(args.config)
    report = run_experiment(cfg)
    for row in report.rows:
        print(f"{row.algorithm:8s} coverage {row.coverage_mean:.4f} "
              f"+- {row.coverage_ci95:.4f}  qd {row.qd_score_mean:.1f} "
              f"+- {row.qd_score_ci95:.1f}")

    out = Path(report.output)
    if cfg.map.n_dims == 2:
        for acfg in cfg.algorithms:
            arc = out / f"archive_{acfg.algorithm}_0.csv"
            if arc.exists():
                _, ppm = export_heatmap(
                    arc, out / f"heatmap_{acfg.algorithm}", cfg.map)
                print("heatmap:", ppm)


if __name__ == "__main__":
    main()
