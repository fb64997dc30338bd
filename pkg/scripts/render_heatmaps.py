#!/usr/bin/env python3
# Render a heatmap pair (.csv + .ppm) for every archive CSV in a run dir.
import argparse
from pathlib import Path

from lsi.archive import preset
from lsi.harness import export_heatmap

ap = argparse.ArgumentParser()
ap.add_argument("run_dir")
ap.add_argument("--map", default="representation",
                help="archive map family the CSVs were written with")
args = ap.parse_args()

map_cfg = preset(args.map)
for arc in sorted(Path(args.run_dir).glob("archive_*.csv")):
    base = arc.with_name(arc.stem.replace("archive", "heatmap", 1))
    _, ppm = export_heatmap(arc, base, map_cfg)
    print(ppm)
