"""Experiment orchestration: config files, seeded trials, CSV reports.

A run is (algorithms x trials) independent searches against one decoder
and one BC family. Trial t always seeds as base_seed + t, so any single
trial can be reproduced without rerunning the sweep. Per-trial archive
and metrics files are written the moment the trial finishes; a crash
mid-sweep keeps everything finished so far.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from configparser import ConfigParser
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from .archive import (
    Archive,
    MapConfig,
    export_csv,
    export_heatmap_csv,
    export_heatmap_ppm,
    load_csv,
    preset,
)
from .generator import decode, load_generator, synthetic_decode
from .metrics import BCConfig, evaluate
from .search import ALGORITHMS, AlgorithmConfig, MetricsRow, preset_config, run
from .sim import NODE_BUDGET
from .tiles import parse_scene, render_scene


class CellNotFound(KeyError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    generator: str                  # "synthetic" or a weights-file path
    family: str
    map: MapConfig
    algorithms: tuple               # AlgorithmConfig templates, final budget
    trials: int
    evaluations: int
    base_seed: int
    output: str
    node_budget: int = NODE_BUDGET
    workers: int = 1
    sky_threshold_row: int = 11
    window: int = 2
    epsilon: float = 1e-5
    truth1: str = ""                # kl family; empty = packaged scene
    truth2: str = ""

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials {self.trials} < 1")
        if self.evaluations < 1:
            raise ValueError(f"evaluations {self.evaluations} < 1")
        if self.workers < 1:
            raise ValueError(f"workers {self.workers} < 1")


def _parse_dims(text: str) -> tuple:
    dims = []
    for part in text.split(","):
        lo, hi, bins = part.strip().split(":")
        dims.append((float(lo), float(hi), int(bins)))
    return tuple(dims)


def load_experiment_config(path) -> ExperimentConfig:
    """INI layout: [experiment] scalars, optional [bc] family parameters,
    optional [map] dims override (lo:hi:bins per dimension, comma-separated),
    optional [algorithm.<name>] search-parameter overrides."""
    cp = ConfigParser(interpolation=None)
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)
    if not cp.has_section("experiment"):
        raise ValueError(f"{path}: missing [experiment] section")
    exp = cp["experiment"]

    family = exp.get("family", "representation")
    evaluations = exp.getint("evaluations", 10000)
    if cp.has_section("map") and cp["map"].get("dims"):
        map_cfg = MapConfig(family, _parse_dims(cp["map"]["dims"]))
    else:
        map_cfg = preset(exp.get("map", family))

    names = [a.strip() for a in
             exp.get("algorithms", ",".join(ALGORITHMS)).split(",") if a.strip()]
    algorithms = []
    for name in names:
        acfg = preset_config(name, evaluations, 0)
        section = f"algorithm.{name}"
        if cp.has_section(section):
            fields = {}
            sec = cp[section]
            for key in ("lam", "emitters", "initial_population"):
                if key in sec:
                    fields[key] = sec.getint(key)
            for key in ("sigma", "sigma1", "sigma2"):
                if key in sec:
                    fields[key] = sec.getfloat(key)
            acfg = replace(acfg, **fields)
        algorithms.append(acfg)

    bc = cp["bc"] if cp.has_section("bc") else {}
    return ExperimentConfig(
        generator=exp.get("generator", "synthetic"),
        family=family,
        map=map_cfg,
        algorithms=tuple(algorithms),
        trials=exp.getint("trials", 1),
        evaluations=evaluations,
        base_seed=exp.getint("base_seed", 0),
        output=exp.get("output", "runs/out"),
        node_budget=exp.getint("node_budget", NODE_BUDGET),
        workers=exp.getint("workers", 1),
        sky_threshold_row=int(bc.get("sky_threshold_row", 11)),
        window=int(bc.get("window", 2)),
        epsilon=float(bc.get("epsilon", 1e-5)),
        truth1=bc.get("truth1", ""),
        truth2=bc.get("truth2", ""),
    )


def _packaged_scene(name: str):
    text = resources.files("lsi").joinpath(f"data/{name}").read_text()
    return parse_scene(text)


def _load_truth(path_or_blank: str, default_name: str):
    if path_or_blank:
        return parse_scene(Path(path_or_blank).read_text())
    return _packaged_scene(default_name)


def make_bc_config(cfg: ExperimentConfig) -> BCConfig:
    truths = ()
    if cfg.family == "kl":
        truths = (_load_truth(cfg.truth1, "truth1.txt"),
                  _load_truth(cfg.truth2, "truth2.txt"))
    return BCConfig(cfg.family, sky_threshold_row=cfg.sky_threshold_row,
                    truths=truths, window=cfg.window, epsilon=cfg.epsilon)


def make_decoder(source: str):
    if source == "synthetic":
        return synthetic_decode
    spec = load_generator(source)
    return lambda z: decode(spec, z)


def make_evaluator(cfg: ExperimentConfig):
    decoder = make_decoder(cfg.generator)
    bc_cfg = make_bc_config(cfg)

    def evaluator(z):
        grid = decoder(z)
        return grid, evaluate(grid, bc_cfg, node_budget=cfg.node_budget)

    return evaluator


def resolve_output(path_text: str) -> Path:
    """LSI_OUTPUT_ROOT reroots relative output paths; absolute paths win."""
    path = Path(path_text)
    root = os.environ.get("LSI_OUTPUT_ROOT")
    if root and not path.is_absolute():
        return Path(root) / path
    return path


_METRIC_COLUMNS = ("evaluations", "coverage", "qd_score",
                   "valid_all", "valid_found")


def _write_metrics(path, log) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_METRIC_COLUMNS)
        for row in log:
            w.writerow([row.evaluations] + [repr(float(v)) for v in row[1:]])


def _trial_job(cfg: ExperimentConfig, acfg: AlgorithmConfig, trial: int,
               out_dir: str):
    seed = cfg.base_seed + trial
    rcfg = replace(acfg, seed=seed)
    archive, log = run(rcfg, make_evaluator(cfg), Archive(cfg.map))
    stem = f"{acfg.algorithm}_{trial}"
    export_csv(archive, Path(out_dir) / f"archive_{stem}.csv")
    _write_metrics(Path(out_dir) / f"metrics_{stem}.csv", log)
    final = log[-1] if log else MetricsRow(0, 0.0, 0.0, 0.0, 0.0)
    return acfg.algorithm, trial, final


@dataclass(frozen=True)
class SummaryRow:
    algorithm: str
    trials: int
    valid_all_mean: float
    valid_all_ci95: float
    coverage_mean: float
    coverage_ci95: float
    valid_found_mean: float
    valid_found_ci95: float
    qd_score_mean: float
    qd_score_ci95: float


@dataclass(frozen=True)
class SummaryReport:
    rows: tuple
    output: str


def _mean_ci(values) -> tuple:
    n = len(values)
    mean = float(np.mean(values))
    if n < 2:
        return mean, 0.0
    half = float(stats.t.ppf(0.975, n - 1) * np.std(values, ddof=1) / math.sqrt(n))
    return mean, half


def run_experiment(cfg: ExperimentConfig) -> SummaryReport:
    out = resolve_output(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(acfg, trial)
            for acfg in cfg.algorithms for trial in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(
                _trial_job,
                [cfg] * len(jobs), [a for a, _ in jobs],
                [t for _, t in jobs], [str(out)] * len(jobs)))
    else:
        results = [_trial_job(cfg, a, t, str(out)) for a, t in jobs]

    finals = {}
    for algorithm, trial, final in results:
        finals.setdefault(algorithm, []).append(final)

    rows = []
    for acfg in cfg.algorithms:
        fs = finals[acfg.algorithm]
        va = _mean_ci([f.valid_all for f in fs])
        cov = _mean_ci([f.coverage for f in fs])
        vf = _mean_ci([f.valid_found for f in fs])
        qd = _mean_ci([f.qd_score for f in fs])
        rows.append(SummaryRow(acfg.algorithm, len(fs), *va, *cov, *vf, *qd))

    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "trials",
                    "valid_all_mean", "valid_all_ci95",
                    "coverage_mean", "coverage_ci95",
                    "valid_found_mean", "valid_found_ci95",
                    "qd_score_mean", "qd_score_ci95"])
        for r in rows:
            w.writerow([r.algorithm, r.trials]
                       + [repr(v) for v in
                          (r.valid_all_mean, r.valid_all_ci95,
                           r.coverage_mean, r.coverage_ci95,
                           r.valid_found_mean, r.valid_found_ci95,
                           r.qd_score_mean, r.qd_score_ci95)])
    return SummaryReport(tuple(rows), str(out))


# ---------------------------------------------------------------------------
# archive post-processing

def export_heatmap(archive_csv, out_base, map_cfg: MapConfig) -> tuple:
    """Write <out_base>.csv (fitness grid, -1 sentinel) and <out_base>.ppm."""
    archive = load_csv(archive_csv, map_cfg)
    base = Path(out_base)
    csv_path = base.with_suffix(".csv")
    ppm_path = base.with_suffix(".ppm")
    export_heatmap_csv(archive, csv_path)
    export_heatmap_ppm(archive, ppm_path)
    return csv_path, ppm_path


def _extreme_cells(archive: Archive) -> list:
    """Min and max filled cell along each BC dimension; lexicographically
    smallest cell breaks ties. Deduplicated, dimension order."""
    cells = sorted(archive.cells)
    out = []
    for d in range(archive.config.n_dims):
        lo_val = min(c[d] for c in cells)
        hi_val = max(c[d] for c in cells)
        for pick in (min(c for c in cells if c[d] == lo_val),
                     min(c for c in cells if c[d] == hi_val)):
            if pick not in out:
                out.append(pick)
    return out


def select_cells(archive: Archive, selection, seed: int = 0) -> list:
    """selection: "extremes", "uniform-<k>", or an explicit cell list."""
    if isinstance(selection, str):
        if selection == "extremes":
            if not archive.cells:
                return []
            return _extreme_cells(archive)
        if selection.startswith("uniform-"):
            k = int(selection.split("-", 1)[1])
            cells = sorted(archive.cells)
            if k > len(cells):
                raise ValueError(
                    f"asked for {k} scenes, archive holds {len(cells)}")
            rng = np.random.default_rng(seed)
            picks = rng.choice(len(cells), size=k, replace=False)
            return [cells[i] for i in sorted(picks)]
        raise ValueError(f"unknown selection {selection!r}")
    out = []
    for cell in selection:
        cell = tuple(int(v) for v in cell)
        if cell not in archive.cells:
            raise CellNotFound(f"cell {cell} is empty")
        out.append(cell)
    return out


def extract_scenes(archive_csv, map_cfg: MapConfig, decoder, selection,
                   out_dir, seed: int = 0) -> list:
    """Re-decode selected elites to scene text plus a manifest.csv of
    (cell, bc, fitness, file)."""
    archive = load_csv(archive_csv, map_cfg)
    cells = select_cells(archive, selection, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = archive.config.n_dims
    written = []
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"cell_idx_{i}" for i in range(d)]
                   + [f"bc_{i}" for i in range(d)] + ["fitness", "file"])
        for cell in cells:
            e = archive.cells[cell]
            grid = decoder(np.asarray(e.latent))
            name = "scene_" + "_".join(str(v) for v in cell) + ".txt"
            (out / name).write_text(render_scene(grid))
            w.writerow(list(cell)
                       + [repr(float(v)) for v in e.evaluation.bc]
                       + [repr(float(e.evaluation.fitness)), name])
            written.append(out / name)
    return written
