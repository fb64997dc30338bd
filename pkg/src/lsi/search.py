"""Search algorithms over the 32-D latent space.

Five drivers share one protocol: propose latents, evaluate, offer the
result to an archive (real for the QD family, pseudo for the baselines),
log summary metrics. Determinism is load-bearing everywhere: a config
plus a seed must reproduce an archive bit for bit, so every random draw
flows through one Generator in a fixed order and every ranking breaks
ties canonically.

CMA-ES internals use the standard published strategy constants; the
experiments only pin lambda and the initial step size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .archive import (
    Archive,
    IMPROVED,
    InsertResult,
    NEW_CELL,
    REJECTED,
    coverage,
    make_elite,
    qd_score,
    random_elite,
    try_insert,
    valid_stats,
)
from .generator import LATENT_DIM

ALGORITHMS = ("random", "cmaes", "me", "me-line", "cmame")


class CovarianceDegenerate(RuntimeError):
    """Covariance ill-conditioned (> 1e14) or broken; caller should restart."""


class NonFiniteUpdate(RuntimeError):
    """A strategy update produced NaN or infinity; caller should restart."""


# ---------------------------------------------------------------------------
# variation operators

def random_sample(rng) -> np.ndarray:
    return rng.standard_normal(LATENT_DIM)


def me_variation(parent, sigma: float, rng) -> np.ndarray:
    return np.asarray(parent, dtype=np.float64) + sigma * rng.standard_normal(LATENT_DIM)


def iso_line_dd(x, y, sigma1: float, sigma2: float, rng) -> np.ndarray:
    """Isotropic perturbation of x plus a random step along the line to y.

    The line coefficient is a single scalar normal draw, so the second
    term is a 1-D search along y - x rather than a per-coordinate blend.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    iso = sigma1 * rng.standard_normal(LATENT_DIM)
    line = sigma2 * rng.standard_normal() * (y - x)
    return x + iso + line


# ---------------------------------------------------------------------------
# CMA-ES

@dataclass(frozen=True, eq=False)
class EmitterState:
    """One CMA-ES strategy; also the unit CMA-ME schedules five of."""

    m: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    lam: int
    generation: int = 0
    restarts: int = 0

    def __post_init__(self):
        if self.m.shape != (LATENT_DIM,) or self.C.shape != (LATENT_DIM, LATENT_DIM):
            raise ValueError("state shapes do not match the latent dimension")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"step size {self.sigma} not positive and finite")
        if self.lam < 2:
            raise ValueError(f"population {self.lam} < 2")


def fresh_emitter(lam: int, sigma: float, mean=None, restarts: int = 0) -> EmitterState:
    m = np.zeros(LATENT_DIM) if mean is None else np.array(mean, dtype=np.float64)
    return EmitterState(m=m, sigma=float(sigma), C=np.eye(LATENT_DIM),
                        p_sigma=np.zeros(LATENT_DIM), p_c=np.zeros(LATENT_DIM),
                        lam=lam, generation=0, restarts=restarts)


class _Constants(NamedTuple):
    weights: np.ndarray
    mueff: float
    cc: float
    cs: float
    c1: float
    cmu: float
    damps: float
    chiN: float


@lru_cache(maxsize=16)
def _constants(lam: int) -> _Constants:
    n = float(LATENT_DIM)
    mu = lam // 2
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / float((w ** 2).sum())
    weights = np.zeros(lam)
    weights[:mu] = w
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chiN = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    return _Constants(weights, mueff, cc, cs, c1, cmu, damps, chiN)


def _decompose(C: np.ndarray):
    try:
        vals, B = np.linalg.eigh(C)
    except np.linalg.LinAlgError as err:
        raise CovarianceDegenerate(str(err)) from None
    if not np.all(np.isfinite(vals)) or vals[0] <= 0:
        raise CovarianceDegenerate("covariance lost positive-definiteness")
    if vals[-1] / vals[0] > 1e14:
        raise CovarianceDegenerate(f"condition number {vals[-1] / vals[0]:.3g}")
    return B, np.sqrt(vals)


def cma_ask(state: EmitterState, rng) -> np.ndarray:
    """lam samples of m + sigma * B D z; one eigendecomposition per call."""
    B, D = _decompose(state.C)
    Z = rng.standard_normal((state.lam, LATENT_DIM))
    return state.m + state.sigma * (Z * D) @ B.T


def cma_tell(state: EmitterState, ranked) -> EmitterState:
    """Standard CMA-ES update from (candidate, rank key) pairs, lower key
    better.

    Candidates are first sorted canonically by (key, candidate bytes) and
    recombination weights are averaged across equal-key blocks, so any
    permutation of tied inputs yields the identical new state. Strategy
    constants stay fixed from the nominal weights.
    """
    lam = state.lam
    if len(ranked) != lam:
        raise ValueError(f"got {len(ranked)} ranked candidates, expected {lam}")
    cst = _constants(lam)
    X = np.array([np.asarray(z, dtype=np.float64) for z, _ in ranked])
    order = sorted(range(lam), key=lambda i: (ranked[i][1], X[i].tobytes()))
    X = X[order]
    keys = [ranked[i][1] for i in order]

    w = cst.weights.copy()
    i = 0
    while i < lam:
        j = i
        while j + 1 < lam and keys[j + 1] == keys[i]:
            j += 1
        if j > i:
            w[i:j + 1] = w[i:j + 1].mean()
        i = j + 1

    n = LATENT_DIM
    Y = (X - state.m) / state.sigma
    y_w = w @ Y
    m_new = state.m + state.sigma * y_w

    B, D = _decompose(state.C)
    inv_sqrt = B @ ((1.0 / D)[:, None] * B.T)
    gen = state.generation + 1
    p_sigma = ((1 - cst.cs) * state.p_sigma
               + math.sqrt(cst.cs * (2 - cst.cs) * cst.mueff) * (inv_sqrt @ y_w))
    ps_norm = float(np.linalg.norm(p_sigma))
    hsig = (ps_norm / math.sqrt(1 - (1 - cst.cs) ** (2 * gen)) / cst.chiN
            < 1.4 + 2 / (n + 1))
    p_c = ((1 - cst.cc) * state.p_c
           + hsig * math.sqrt(cst.cc * (2 - cst.cc) * cst.mueff) * y_w)

    rank_mu = (Y.T * w) @ Y
    C_new = ((1 - cst.c1 - cst.cmu * w.sum()) * state.C
             + cst.c1 * (np.outer(p_c, p_c)
                         + (0.0 if hsig else cst.cc * (2 - cst.cc)) * state.C)
             + cst.cmu * rank_mu)
    C_new = (C_new + C_new.T) / 2
    sigma_new = state.sigma * math.exp((cst.cs / cst.damps)
                                       * (ps_norm / cst.chiN - 1))

    if not (np.all(np.isfinite(m_new)) and np.all(np.isfinite(C_new))
            and np.all(np.isfinite(p_sigma)) and np.all(np.isfinite(p_c))
            and math.isfinite(sigma_new) and sigma_new > 0):
        raise NonFiniteUpdate("update left the finite domain")
    return EmitterState(m=m_new, sigma=sigma_new, C=C_new, p_sigma=p_sigma,
                        p_c=p_c, lam=lam, generation=gen,
                        restarts=state.restarts)


# ---------------------------------------------------------------------------
# CMA-ME ranking

_PRIORITY = {NEW_CELL: 0, IMPROVED: 1, REJECTED: 2}


def _improvement_key(result: InsertResult, sample_index: int):
    p = _PRIORITY[result.kind]
    if p == 2:
        return (2, float(sample_index))
    # delta is the elite fitness for new cells, the gain for improvements
    return (p, -result.delta)


def improvement_rank(results):
    """Reorder (candidate, InsertResult) pairs: discoveries first by fitness,
    then improvements by gain, then rejections in sample order."""
    return [pair for _, pair in
            sorted(enumerate(results),
                   key=lambda t: _improvement_key(t[1][1], t[0]))]


# ---------------------------------------------------------------------------
# driver

@dataclass(frozen=True)
class AlgorithmConfig:
    algorithm: str
    budget: int
    seed: int
    lam: int = 0
    sigma: float = 0.0
    sigma1: float = 0.0
    sigma2: float = 0.0
    emitters: int = 0
    initial_population: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.budget < 0:
            raise ValueError(f"budget {self.budget} < 0")
        if self.algorithm in ("cmaes", "cmame") and self.lam < 2:
            raise ValueError(f"{self.algorithm} needs lam >= 2")
        if self.algorithm == "cmame" and self.emitters < 1:
            raise ValueError("cmame needs at least one emitter")
        if self.algorithm in ("cmaes", "cmame", "me") and not self.sigma > 0:
            raise ValueError(f"{self.algorithm} needs sigma > 0")
        if self.algorithm == "me-line" and not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("me-line needs sigma1, sigma2 > 0")
        if self.algorithm in ("me", "me-line") and self.initial_population < 1:
            raise ValueError(f"{self.algorithm} needs an initial population")


def preset_config(algorithm: str, budget: int, seed: int) -> AlgorithmConfig:
    """The published per-algorithm search parameters."""
    base = dict(algorithm=algorithm, budget=budget, seed=seed)
    if algorithm == "random":
        return AlgorithmConfig(**base)
    if algorithm == "cmaes":
        return AlgorithmConfig(**base, lam=17, sigma=0.5)
    if algorithm == "me":
        return AlgorithmConfig(**base, sigma=0.2, initial_population=100)
    if algorithm == "me-line":
        return AlgorithmConfig(**base, sigma1=0.02, sigma2=0.2,
                               initial_population=100)
    if algorithm == "cmame":
        return AlgorithmConfig(**base, lam=37, sigma=0.2, emitters=5)
    raise ValueError(f"unknown algorithm {algorithm!r}")


class MetricsRow(NamedTuple):
    evaluations: int
    coverage: float
    qd_score: float
    valid_all: float
    valid_found: float


_LOG_EVERY = 100     # steady-state algorithms log on this evaluation cadence
_STAGNATION = 5      # zero-insertion generations before an emitter restarts


def _restarted(state: EmitterState, archive: Archive, sigma0: float, rng) -> EmitterState:
    mean = random_elite(archive, rng).latent if archive.cells else None
    return fresh_emitter(state.lam, sigma0, mean=mean,
                         restarts=state.restarts + 1)


def run(cfg: AlgorithmConfig, evaluator, archive: Archive):
    """Drive one algorithm to its evaluation budget against one archive.

    evaluator(z) -> (TileGrid, Evaluation). Returns (archive, log). When
    the budget is not a multiple of lambda the truncated final batch is
    evaluated and offered to the archive but not fed back into the
    strategy; the run ends there anyway.
    """
    rng = np.random.default_rng(cfg.seed)
    log = []
    n = 0

    def consume(z):
        nonlocal n
        n += 1
        z = np.asarray(z, dtype=np.float64)
        grid, ev = evaluator(z)
        el = make_elite(z, grid, ev, archive.config, discovered_at=n)
        return el, try_insert(archive, el)

    def snap():
        va, vf = valid_stats(archive)
        log.append(MetricsRow(n, coverage(archive), qd_score(archive), va, vf))

    def maybe_snap():
        if n % _LOG_EVERY == 0:
            snap()

    def finish():
        if n and (not log or log[-1].evaluations != n):
            snap()
        return archive, log

    if cfg.algorithm == "random":
        while n < cfg.budget:
            consume(random_sample(rng))
            maybe_snap()
        return finish()

    if cfg.algorithm in ("me", "me-line"):
        for _ in range(min(cfg.initial_population, cfg.budget)):
            consume(random_sample(rng))
            maybe_snap()
        while n < cfg.budget:
            x = np.asarray(random_elite(archive, rng).latent)
            if cfg.algorithm == "me":
                child = me_variation(x, cfg.sigma, rng)
            else:
                y = np.asarray(random_elite(archive, rng).latent)
                child = iso_line_dd(x, y, cfg.sigma1, cfg.sigma2, rng)
            consume(child)
            maybe_snap()
        return finish()

    if cfg.algorithm == "cmaes":
        state = fresh_emitter(cfg.lam, cfg.sigma)
        while n < cfg.budget:
            try:
                X = cma_ask(state, rng)
            except CovarianceDegenerate:
                state = _restarted(state, archive, cfg.sigma, rng)
                X = cma_ask(state, rng)
            take = min(cfg.lam, cfg.budget - n)
            scored = [(z, consume(z)[0].evaluation.fitness) for z in X[:take]]
            if take == cfg.lam:
                try:
                    state = cma_tell(state, [(z, -f) for z, f in scored])
                except NonFiniteUpdate:
                    state = _restarted(state, archive, cfg.sigma, rng)
            snap()
        return finish()

    # cmame: round-robin improvement emitters
    states = [fresh_emitter(cfg.lam, cfg.sigma) for _ in range(cfg.emitters)]
    stagnant = [0] * cfg.emitters
    while n < cfg.budget:
        for i in range(cfg.emitters):
            if n >= cfg.budget:
                break
            try:
                X = cma_ask(states[i], rng)
            except CovarianceDegenerate:
                states[i] = _restarted(states[i], archive, cfg.sigma, rng)
                stagnant[i] = 0
                X = cma_ask(states[i], rng)
            take = min(cfg.lam, cfg.budget - n)
            batch = [(z, consume(z)[1]) for z in X[:take]]
            if take < cfg.lam:
                break
            keyed = [(z, _improvement_key(res, j))
                     for j, (z, res) in enumerate(batch)]
            try:
                states[i] = cma_tell(states[i], keyed)
            except NonFiniteUpdate:
                states[i] = _restarted(states[i], archive, cfg.sigma, rng)
                stagnant[i] = 0
                continue
            if any(res.kind != REJECTED for _, res in batch):
                stagnant[i] = 0
            else:
                stagnant[i] += 1
                if stagnant[i] >= _STAGNATION:
                    states[i] = _restarted(states[i], archive, cfg.sigma, rng)
                    stagnant[i] = 0
        snap()
    return finish()
