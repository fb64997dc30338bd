import csv
from pathlib import Path

import numpy as np
import pytest

from lsi.archive import Archive, preset, export_csv, try_insert, make_elite
from lsi.generator import synthetic_decode
from lsi.harness import (
    CellNotFound,
    ExperimentConfig,
    export_heatmap,
    extract_scenes,
    load_experiment_config,
    make_bc_config,
    make_evaluator,
    resolve_output,
    run_experiment,
    select_cells,
)
from lsi.metrics import BCConfig, Evaluation, evaluate
from lsi.tiles import parse_scene


def write_config(path, body):
    path.write_text(body)
    return load_experiment_config(path)


def tiny_config(tmp_path, **over):
    fields = dict(
        generator="synthetic", family="representation",
        map=preset("representation"),
        algorithms=(), trials=1, evaluations=60, base_seed=3,
        output=str(tmp_path / "out"), node_budget=400, workers=1)
    fields.update(over)
    if not fields["algorithms"]:
        from lsi.search import preset_config
        fields["algorithms"] = (
            preset_config("random", fields["evaluations"], 0),)
    return ExperimentConfig(**fields)


# ---------------------------------------------------------------------------
# config parsing

def test_load_config_full(tmp_path):
    cfg = write_config(tmp_path / "e.ini", """
[experiment]
generator = synthetic
family = representation
algorithms = random, cmaes
trials = 4
evaluations = 500
base_seed = 9
output = runs/x
node_budget = 800
workers = 2

[bc]
sky_threshold_row = 10

[algorithm.cmaes]
lam = 8
sigma = 0.3
""")
    assert cfg.generator == "synthetic"
    assert cfg.trials == 4 and cfg.evaluations == 500 and cfg.base_seed == 9
    assert cfg.node_budget == 800 and cfg.workers == 2
    assert cfg.sky_threshold_row == 10
    assert cfg.map.dims == ((0.0, 150.0, 151), (0.0, 25.0, 26))
    names = [a.algorithm for a in cfg.algorithms]
    assert names == ["random", "cmaes"]
    cma = cfg.algorithms[1]
    assert (cma.lam, cma.sigma, cma.budget) == (8, 0.3, 500)


def test_load_config_map_override(tmp_path):
    cfg = write_config(tmp_path / "e.ini", """
[experiment]
family = representation
algorithms = random
evaluations = 10

[map]
dims = 0:10:5, 0:4:2
""")
    assert cfg.map.dims == ((0.0, 10.0, 5), (0.0, 4.0, 2))


def test_load_config_missing_file_and_section(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_experiment_config(tmp_path / "nope.ini")
    p = tmp_path / "bad.ini"
    p.write_text("[other]\nx = 1\n")
    with pytest.raises(ValueError):
        load_experiment_config(p)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        tiny_config(tmp_path, trials=0)
    with pytest.raises(ValueError):
        tiny_config(tmp_path, evaluations=0)
    with pytest.raises(ValueError):
        tiny_config(tmp_path, workers=0)


def test_bc_config_uses_packaged_truths(tmp_path):
    cfg = tiny_config(tmp_path, family="kl", map=preset("kl"))
    bc = make_bc_config(cfg)
    assert bc.family == "kl" and len(bc.truths) == 2
    assert bc.truths[0] != bc.truths[1]


def test_resolve_output_env_override(tmp_path, monkeypatch):
    monkeypatch.delenv("LSI_OUTPUT_ROOT", raising=False)
    assert resolve_output("runs/x") == Path("runs/x")
    monkeypatch.setenv("LSI_OUTPUT_ROOT", str(tmp_path))
    assert resolve_output("runs/x") == tmp_path / "runs" / "x"
    absolute = str(tmp_path / "elsewhere")
    assert resolve_output(absolute) == Path(absolute)


# ---------------------------------------------------------------------------
# run_experiment

def test_file_contract_single_trial(tmp_path):
    cfg = tiny_config(tmp_path, evaluations=10)
    report = run_experiment(cfg)
    out = Path(report.output)
    assert (out / "archive_random_0.csv").exists()
    assert (out / "metrics_random_0.csv").exists()
    with open(out / "summary.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 2 and rows[1][0] == "random"


def test_summary_single_trial_equals_final(tmp_path):
    cfg = tiny_config(tmp_path, evaluations=50)
    report = run_experiment(cfg)
    with open(Path(report.output) / "metrics_random_0.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    final = rows[-1]
    row = report.rows[0]
    assert row.trials == 1
    assert row.coverage_mean == float(final["coverage"])
    assert row.qd_score_mean == float(final["qd_score"])
    assert row.valid_all_mean == float(final["valid_all"])
    assert row.valid_found_mean == float(final["valid_found"])
    assert (row.coverage_ci95, row.qd_score_ci95) == (0.0, 0.0)


def test_summary_means_inside_trial_envelope(tmp_path):
    cfg = tiny_config(tmp_path, trials=3, evaluations=40)
    report = run_experiment(cfg)
    finals = []
    for t in range(3):
        with open(Path(report.output) / f"metrics_random_{t}.csv",
                  newline="") as fh:
            finals.append(float(list(csv.DictReader(fh))[-1]["qd_score"]))
    row = report.rows[0]
    assert min(finals) <= row.qd_score_mean <= max(finals)
    assert row.qd_score_ci95 >= 0.0


def test_rerun_is_byte_identical(tmp_path):
    from lsi.search import preset_config
    algs = (preset_config("me", 120, 0), preset_config("cmaes", 120, 0))
    names = ["archive_me_0.csv", "metrics_me_0.csv",
             "archive_cmaes_0.csv", "metrics_cmaes_0.csv", "summary.csv"]
    blobs = []
    for sub in ("a", "b"):
        cfg = tiny_config(tmp_path, algorithms=algs, evaluations=120,
                          output=str(tmp_path / sub))
        out = Path(run_experiment(cfg).output)
        blobs.append([(out / n).read_bytes() for n in names])
    assert blobs[0] == blobs[1]


def test_metrics_qd_column_non_decreasing(tmp_path):
    from lsi.search import preset_config
    cfg = tiny_config(tmp_path, evaluations=200,
                      algorithms=(preset_config("me-line", 200, 0),))
    report = run_experiment(cfg)
    with open(Path(report.output) / "metrics_me-line_0.csv", newline="") as fh:
        qd = [float(r["qd_score"]) for r in csv.DictReader(fh)]
    assert qd == sorted(qd)


def test_worker_pool_matches_sequential(tmp_path):
    from lsi.search import preset_config
    algs = (preset_config("random", 40, 0),)
    cfg1 = tiny_config(tmp_path, algorithms=algs, evaluations=40, trials=2,
                       output=str(tmp_path / "seq"), workers=1)
    cfg2 = tiny_config(tmp_path, algorithms=algs, evaluations=40, trials=2,
                       output=str(tmp_path / "par"), workers=2)
    o1 = Path(run_experiment(cfg1).output)
    o2 = Path(run_experiment(cfg2).output)
    for name in ("archive_random_0.csv", "archive_random_1.csv", "summary.csv"):
        assert (o1 / name).read_bytes() == (o2 / name).read_bytes()


def test_kl_family_run(tmp_path):
    from lsi.search import preset_config
    cfg = tiny_config(tmp_path, family="kl", map=preset("kl"),
                      evaluations=60,
                      algorithms=(preset_config("random", 60, 0),))
    report = run_experiment(cfg)
    assert (Path(report.output) / "archive_random_0.csv").exists()
    assert report.rows[0].coverage_mean > 0.0


# ---------------------------------------------------------------------------
# heatmap export

def test_export_heatmap_kl_dims(tmp_path):
    kl = preset("kl")
    arc = Archive(kl)
    grid = synthetic_decode(np.zeros(32))
    ev = Evaluation(1.0, (0.0, 0.0))
    try_insert(arc, make_elite(np.zeros(32), grid, ev, kl, 1))
    src = tmp_path / "arc.csv"
    export_csv(arc, src)
    csv_path, ppm_path = export_heatmap(src, tmp_path / "heat", kl)
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 60 and all(len(r) == 60 for r in rows)
    assert float(rows[0][0]) == 1.0
    raw = ppm_path.read_bytes()
    assert raw.startswith(b"P6\n60 60\n255\n")
    body = raw.split(b"\n", 3)[3]
    assert body.count(b"\xff") == 3          # exactly one bright pixel
    assert len(body) == 60 * 60 * 3


def test_export_heatmap_empty_archive_all_sentinel(tmp_path):
    kl = preset("kl")
    src = tmp_path / "arc.csv"
    export_csv(Archive(kl), src)
    csv_path, _ = export_heatmap(src, tmp_path / "heat", kl)
    with open(csv_path, newline="") as fh:
        vals = {v for row in csv.reader(fh) for v in row}
    assert vals == {"-1.0"}


# ---------------------------------------------------------------------------
# scene extraction

def _built_archive(tmp_path, budget=250):
    from lsi.search import preset_config
    cfg = tiny_config(tmp_path, evaluations=budget,
                      algorithms=(preset_config("me", budget, 0),))
    report = run_experiment(cfg)
    return Path(report.output) / "archive_me_0.csv", cfg


def test_extract_extremes(tmp_path):
    src, cfg = _built_archive(tmp_path)
    out = tmp_path / "scenes"
    written = extract_scenes(src, cfg.map, synthetic_decode, "extremes", out)
    assert 1 <= len(written) <= 4
    with open(out / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(written)
    # re-decoded scene's recomputed BCs land in the recorded cell
    bc_cfg = BCConfig("representation")
    for row in rows:
        grid = parse_scene((out / row["file"]).read_text())
        ev = evaluate(grid, bc_cfg, node_budget=cfg.node_budget)
        from lsi.archive import bc_to_cell
        assert bc_to_cell(cfg.map, ev.bc) == \
            (int(row["cell_idx_0"]), int(row["cell_idx_1"]))


def test_extract_uniform_k(tmp_path):
    src, cfg = _built_archive(tmp_path)
    out = tmp_path / "u"
    written = extract_scenes(src, cfg.map, synthetic_decode, "uniform-5", out,
                             seed=4)
    assert len(written) == 5
    again = extract_scenes(src, cfg.map, synthetic_decode, "uniform-5",
                           tmp_path / "u2", seed=4)
    assert [p.name for p in written] == [p.name for p in again]


def test_extract_cell_list_and_missing(tmp_path):
    src, cfg = _built_archive(tmp_path)
    from lsi.archive import load_csv
    arc = load_csv(src, cfg.map)
    have = sorted(arc.cells)[0]
    out = extract_scenes(src, cfg.map, synthetic_decode, [have],
                         tmp_path / "c")
    assert len(out) == 1
    with pytest.raises(CellNotFound):
        extract_scenes(src, cfg.map, synthetic_decode, [(150, 25)],
                       tmp_path / "c2")


def test_select_uniform_overdraw_rejected(tmp_path):
    src, cfg = _built_archive(tmp_path, budget=120)
    from lsi.archive import load_csv
    arc = load_csv(src, cfg.map)
    with pytest.raises(ValueError):
        select_cells(arc, f"uniform-{len(arc.cells) + 1}")
    with pytest.raises(ValueError):
        select_cells(arc, "nearest-9")
