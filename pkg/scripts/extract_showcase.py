#!/usr/bin/env python3
"""Pull the extreme elites out of an archive and re-decode them to scenes.

The four corners of the behaviour map are usually the interesting ones:
emptiest sky, densest sky, no enemies, most enemies. Scene text plus a
manifest.csv land in the output directory; feed a scene to
`lsi simulate <file> --trace out.jsonl` to watch the playthrough.
"""

import argparse

from lsi.archive import preset
from lsi.harness import extract_scenes, make_decoder


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("archive_csv")
    ap.add_argument("-o", "--out", default="scenes")
    ap.add_argument("--map", default="representation")
    ap.add_argument("--generator", default="synthetic",
                    help='"synthetic" or a path to an LSIGEN1 weights file')
    ap.add_argument("--select", default="extremes",
                    help='"extremes" or "uniform-<k>"')
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    written = extract_scenes(args.archive_csv, preset(args.map),
                             make_decoder(args.generator), args.select,
                             args.out, seed=args.seed)
    for path in written:
        print(path)


if __name__ == "__main__":
    main()
