import math

import numpy as np
import pytest

from lsi.archive import (
    IMPROVED,
    NEW_CELL,
    REJECTED,
    Archive,
    InsertResult,
    export_csv,
    preset,
)
from lsi.metrics import Evaluation
from lsi.search import (
    AlgorithmConfig,
    CovarianceDegenerate,
    EmitterState,
    cma_ask,
    cma_tell,
    fresh_emitter,
    improvement_rank,
    iso_line_dd,
    me_variation,
    preset_config,
    random_sample,
    run,
)
from lsi.tiles import COLS, ROWS, TileGrid

N = 32


# ---------------------------------------------------------------------------
# variation operators

def test_random_sample_statistics():
    rng = np.random.default_rng(0)
    X = np.array([random_sample(rng) for _ in range(100_000)])
    assert X.shape == (100_000, N)
    n = len(X)
    # per-dimension moments of a standard normal, 3 sigma of sampling error
    assert np.all(np.abs(X.mean(axis=0)) < 3 / math.sqrt(n))
    assert np.all(np.abs(X.var(axis=0) - 1) < 3 * math.sqrt(2 / (n - 1)))


def test_random_sample_deterministic():
    a = np.array([random_sample(np.random.default_rng(42)) for _ in range(5)])
    b = np.array([random_sample(np.random.default_rng(42)) for _ in range(5)])
    assert a.tobytes() == b.tobytes()


def test_me_variation_zero_sigma_and_spread():
    rng = np.random.default_rng(1)
    parent = rng.standard_normal(N)
    assert np.array_equal(me_variation(parent, 0.0, rng), parent)
    kids = np.array([me_variation(parent, 0.2, rng) for _ in range(20_000)])
    d = (kids - parent).ravel()
    assert abs(d.std() - 0.2) < 3 * 0.2 / math.sqrt(2 * d.size)
    assert abs(d.mean()) < 3 * 0.2 / math.sqrt(d.size)


def test_iso_line_dd_degenerate_cases():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(N)
    y = rng.standard_normal(N)
    assert np.array_equal(iso_line_dd(x, y, 0.0, 0.0, rng), x)
    # sigma1 = 0 leaves the child on the line through x and y
    child = iso_line_dd(x, y, 0.0, 0.3, np.random.default_rng(3))
    t = (child - x) / (y - x)
    assert np.allclose(t, t[0])
    # x = y reduces to the isotropic operator, draw for draw
    same = iso_line_dd(x, x, 0.02, 0.2, np.random.default_rng(4))
    iso = me_variation(x, 0.02, np.random.default_rng(4))
    assert np.array_equal(same, iso)


# ---------------------------------------------------------------------------
# CMA-ES machinery

def test_cma_ask_shape_and_limit():
    st = fresh_emitter(17, 1e-12, mean=np.full(N, 3.0))
    X = cma_ask(st, np.random.default_rng(0))
    assert X.shape == (17, N)
    assert np.allclose(X, 3.0, atol=1e-9)


def test_cma_ask_sample_covariance_tracks_C():
    rng = np.random.default_rng(9)
    A = rng.standard_normal((N, N)) * 0.3
    C = A @ A.T + np.eye(N)
    C = (C + C.T) / 2
    sigma = 0.7
    st = EmitterState(m=np.zeros(N), sigma=sigma, C=C,
                      p_sigma=np.zeros(N), p_c=np.zeros(N), lam=2000)
    draws = np.vstack([cma_ask(st, rng) for _ in range(50)])
    S = np.cov(draws.T)
    target = sigma * sigma * C
    assert np.max(np.abs(S - target)) < 0.05 * np.max(np.diag(target))


def test_cma_ask_rejects_degenerate_covariance():
    bad = np.eye(N)
    bad[0, 0] = 1e16
    st = EmitterState(m=np.zeros(N), sigma=0.5, C=bad,
                      p_sigma=np.zeros(N), p_c=np.zeros(N), lam=17)
    with pytest.raises(CovarianceDegenerate):
        cma_ask(st, np.random.default_rng(0))
    st2 = EmitterState(m=np.zeros(N), sigma=0.5, C=-np.eye(N),
                       p_sigma=np.zeros(N), p_c=np.zeros(N), lam=17)
    with pytest.raises(CovarianceDegenerate):
        cma_ask(st2, np.random.default_rng(0))


def test_cma_tell_requires_full_population():
    st = fresh_emitter(17, 0.5)
    with pytest.raises(ValueError):
        cma_tell(st, [(np.zeros(N), 0.0)] * 16)


def test_cma_tell_moves_mean_toward_better_candidates():
    st = fresh_emitter(4, 0.5)
    target = np.full(N, 2.0)
    rng = np.random.default_rng(5)
    X = [target + 0.01 * rng.standard_normal(N) for _ in range(2)] \
        + [-target + 0.01 * rng.standard_normal(N) for _ in range(2)]
    ranked = [(z, float(np.linalg.norm(z - target))) for z in X]
    new = cma_tell(st, ranked)
    assert np.linalg.norm(new.m - target) < np.linalg.norm(st.m - target)
    assert new.generation == 1


def test_cma_tell_tie_permutation_invariant():
    rng = np.random.default_rng(6)
    X = [rng.standard_normal(N) for _ in range(6)]
    keys = [0.0, 0.0, 0.0, 1.0, 1.0, 2.0]
    st = fresh_emitter(6, 0.5)
    ref = cma_tell(st, list(zip(X, keys)))
    perm = [2, 0, 1, 4, 3, 5]   # shuffles only within equal-key blocks
    got = cma_tell(st, [(X[i], keys[i]) for i in perm])
    assert np.array_equal(ref.m, got.m)
    assert np.array_equal(ref.C, got.C)
    assert ref.sigma == got.sigma


def test_cma_tell_spd_under_random_rankings():
    rng = np.random.default_rng(7)
    st = fresh_emitter(17, 0.5)
    for _ in range(200):
        X = cma_ask(st, rng)
        ranked = [(z, float(rng.standard_normal())) for z in X]
        st = cma_tell(st, ranked)
        assert np.max(np.abs(st.C - st.C.T)) < 1e-10
        assert np.linalg.eigvalsh(st.C)[0] > 0
        assert st.sigma > 0 and math.isfinite(st.sigma)


def test_cma_sphere_quick_descent():
    # full convergence criterion lives in the acceptance suite; this is the
    # 600-evaluation smoke version
    rng = np.random.default_rng(11)
    st = fresh_emitter(17, 0.5, mean=np.ones(N))
    for _ in range(35):
        X = cma_ask(st, rng)
        st = cma_tell(st, [(z, float(z @ z)) for z in X])
    assert float(st.m @ st.m) < float(np.ones(N) @ np.ones(N)) / 10


# ---------------------------------------------------------------------------
# improvement ranking

def _res(kind, delta=0.0):
    return InsertResult(kind, delta)


def test_improvement_rank_examples():
    new = ("a", _res(NEW_CELL, 0.2))
    imp = ("b", _res(IMPROVED, 0.3))
    assert improvement_rank([imp, new]) == [new, imp]
    hi = ("c", _res(IMPROVED, 0.5))
    lo = ("d", _res(IMPROVED, 0.1))
    assert improvement_rank([lo, hi]) == [hi, lo]
    rej = [("e", _res(REJECTED)), ("f", _res(REJECTED)), ("g", _res(REJECTED))]
    assert improvement_rank(rej) == rej


def test_improvement_rank_sorts_discoveries_by_fitness():
    a = ("a", _res(NEW_CELL, 0.1))
    b = ("b", _res(NEW_CELL, 0.9))
    c = ("c", _res(NEW_CELL, 0.5))
    assert improvement_rank([a, b, c]) == [b, c, a]


def test_improvement_rank_exhaustive_priority():
    import itertools
    trio = [("n", _res(NEW_CELL, 0.5)), ("i", _res(IMPROVED, 0.5)),
            ("r", _res(REJECTED))]
    for perm in itertools.permutations(trio):
        got = improvement_rank(list(perm))
        assert [p[0] for p in got] == ["n", "i", "r"]


# ---------------------------------------------------------------------------
# config

def test_preset_configs_match_published_parameters():
    c = preset_config("cmaes", 1000, 0)
    assert (c.lam, c.sigma) == (17, 0.5)
    m = preset_config("me", 1000, 0)
    assert (m.sigma, m.initial_population) == (0.2, 100)
    ml = preset_config("me-line", 1000, 0)
    assert (ml.sigma1, ml.sigma2, ml.initial_population) == (0.02, 0.2, 100)
    cm = preset_config("cmame", 1000, 0)
    assert (cm.lam, cm.emitters, cm.sigma) == (37, 5, 0.2)
    with pytest.raises(ValueError):
        preset_config("hillclimb", 10, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        AlgorithmConfig("cmaes", 100, 0, lam=1, sigma=0.5)
    with pytest.raises(ValueError):
        AlgorithmConfig("me", 100, 0, sigma=0.2)   # no initial population
    with pytest.raises(ValueError):
        AlgorithmConfig("random", -1, 0)


# ---------------------------------------------------------------------------
# run() driver against a cheap synthetic domain

_GRID = TileGrid(np.zeros((ROWS, COLS), dtype=np.uint8))


def toy_evaluator(z):
    r2 = float(z @ z)
    fitness = 1.0 / (1.0 + r2 / N)
    bc = (min(150.0, r2), min(25.0, max(0.0, 12.5 + 5.0 * float(z[0]))))
    return _GRID, Evaluation(fitness, bc)


def _run(algorithm, budget, seed=3):
    cfg = preset_config(algorithm, budget, seed)
    return run(cfg, toy_evaluator, Archive(preset("representation")))


@pytest.mark.parametrize("algorithm", ["random", "cmaes", "me", "me-line", "cmame"])
def test_run_budget_and_monotone_log(algorithm):
    arc, log = _run(algorithm, 700)
    assert arc.evaluations == 700
    assert log[-1].evaluations == 700
    evs = [r.evaluations for r in log]
    assert evs == sorted(evs)
    qd = [r.qd_score for r in log]
    assert all(b >= a - 1e-12 for a, b in zip(qd, qd[1:]))
    cov = [r.coverage for r in log]
    assert all(b >= a for a, b in zip(cov, cov[1:]))


def test_run_deterministic():
    a1, l1 = _run("cmame", 600, seed=9)
    a2, l2 = _run("cmame", 600, seed=9)
    assert l1 == l2
    assert set(a1.cells) == set(a2.cells)
    for cell in a1.cells:
        e1, e2 = a1.cells[cell], a2.cells[cell]
        assert e1.latent == e2.latent
        assert e1.evaluation == e2.evaluation
        assert e1.discovered_at == e2.discovered_at


def test_run_deterministic_csv_bytes(tmp_path):
    p1, p2 = tmp_path / "1.csv", tmp_path / "2.csv"
    export_csv(_run("me-line", 500, seed=5)[0], p1)
    export_csv(_run("me-line", 500, seed=5)[0], p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_run_zero_budget_empty_log():
    for algorithm in ["random", "cmaes", "me", "me-line", "cmame"]:
        arc, log = _run(algorithm, 0)
        assert log == [] and len(arc.cells) == 0


def test_me_budget_equal_to_seed_population():
    # the whole budget goes to initial sampling; no steady-state children
    arc, log = _run("me", 100)
    assert arc.evaluations == 100
    assert log[-1].evaluations == 100


def test_cmame_generation_is_185_evaluations():
    arc, log = _run("cmame", 740)
    assert [r.evaluations for r in log] == [185, 370, 555, 740]


def test_cmaes_logs_every_generation():
    arc, log = _run("cmaes", 100)
    # 5 full generations of 17, then a truncated batch of 15
    assert [r.evaluations for r in log] == [17, 34, 51, 68, 85, 100]


def test_run_log_cadence_steady_state():
    arc, log = _run("random", 250)
    assert [r.evaluations for r in log] == [100, 200, 250]
