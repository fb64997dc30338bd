"""Fitness and the three behaviour-characteristic families.

Fitness is horizontal completion from the A* playthrough.  BCs come in
three families: representation-based counts read off the grid, the 8-bit
agent event vector, and tile-pattern KL divergence against two ground-truth
scenes.  All functions here are pure; evaluate() memoizes the playthrough
summary per (grid, budget, alphabet) since optimizers frequently revisit
identical grids (the decoder is many-to-one on latents).

Sky tiles count non-empty non-enemy cells above the threshold row; coins
count, enemies do not.  KL direction is generated against ground truth,
smoothed by an epsilon-mixture with the uniform distribution on the union
support so differing supports stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .sim import EVENT_ORDER, NODE_BUDGET, NoSpawnSurface, astar_play
from .tiles import CANONICAL_ALPHABET, COLS, ROWS, TileAlphabet, TileGrid

SKY_THRESHOLD_ROW = 11
KL_EPSILON = 1e-5
KL_WINDOW = 2

FAMILIES = ("representation", "agent", "kl")


@dataclass(frozen=True)
class BCConfig:
    family: str
    sky_threshold_row: int = SKY_THRESHOLD_ROW
    truths: tuple = ()               # kl only: exactly two TileGrids
    window: int = KL_WINDOW
    epsilon: float = KL_EPSILON

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown BC family {self.family!r}")
        if self.family == "kl" and len(self.truths) != 2:
            raise ValueError("kl family needs exactly two ground-truth scenes")
        if not 0 <= self.sky_threshold_row < ROWS:
            raise ValueError(f"sky threshold row {self.sky_threshold_row} out of range")
        if self.window < 1:
            raise ValueError("window size must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def bc_length(self) -> int:
        return 8 if self.family == "agent" else 2


@dataclass(frozen=True)
class PatternDistribution:
    """Probabilities over w x w tile patterns (keys are opaque)."""

    probs: dict
    window: int

    def __post_init__(self):
        total = sum(self.probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, expected 1")
        if any(p <= 0 for p in self.probs.values()):
            raise ValueError("probabilities must be positive")


@dataclass(frozen=True)
class Evaluation:
    fitness: float
    bc: tuple

    def __post_init__(self):
        if not 0.0 <= self.fitness <= 1.0:
            raise ValueError(f"fitness {self.fitness} outside [0,1]")
        if len(self.bc) not in (2, 8):
            raise ValueError(f"bc length {len(self.bc)}")


def sky_tile_count(grid: TileGrid, threshold_row: int = SKY_THRESHOLD_ROW,
                   alphabet: TileAlphabet = CANONICAL_ALPHABET) -> int:
    """Non-empty, non-enemy cells strictly above threshold_row (row 0 = top)."""
    if not 0 <= threshold_row < ROWS:
        raise ValueError(f"threshold row {threshold_row} out of range")
    skyish = np.array([cls != "empty" and not en
                       for cls, en in zip(alphabet.classes, alphabet.enemy)])
    return int(skyish[grid.cells[:threshold_row]].sum())


def enemy_count(grid: TileGrid, alphabet: TileAlphabet = CANONICAL_ALPHABET) -> int:
    return int(np.asarray(alphabet.enemy)[grid.cells].sum())


def pattern_distribution(grid: TileGrid, w: int = KL_WINDOW) -> PatternDistribution:
    """Empirical distribution of the (16-w+1)*(56-w+1) stride-1 windows."""
    if w < 1:
        raise ValueError("window size must be >= 1")
    if w > ROWS or w > COLS:
        raise ValueError(f"window {w} exceeds grid dimensions")
    view = np.lib.stride_tricks.sliding_window_view(grid.cells, (w, w))
    flat = view.reshape(-1, w * w)
    if w <= 3:
        # base-17 packing keeps the common small windows vectorized
        weights = 17 ** np.arange(w * w, dtype=np.int64)
        keys, counts = np.unique(flat.astype(np.int64) @ weights, return_counts=True)
        total = float(flat.shape[0])
        probs = {int(k): c / total for k, c in zip(keys, counts)}
    else:
        counts = {}
        for row in flat:
            key = row.tobytes()
            counts[key] = counts.get(key, 0) + 1
        total = float(flat.shape[0])
        probs = {k: c / total for k, c in counts.items()}
    return PatternDistribution(probs, w)


def kl_divergence(p, q, epsilon: float = KL_EPSILON) -> float:
    """Smoothed KL over the union support.

    Both arguments take the epsilon-mixture with the uniform distribution on
    the union of supports, so the value is finite for any pair and exactly
    zero when p == q.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    pp = p.probs if isinstance(p, PatternDistribution) else p
    qp = q.probs if isinstance(q, PatternDistribution) else q
    support = set(pp) | set(qp)
    u = 1.0 / len(support)
    keep = 1.0 - epsilon
    total = 0.0
    for x in support:
        px = keep * pp.get(x, 0.0) + epsilon * u
        qx = keep * qp.get(x, 0.0) + epsilon * u
        total += px * math.log(px / qx)
    return total


@lru_cache(maxsize=200_000)
def _play_summary(grid: TileGrid, budget: int, alphabet: TileAlphabet):
    """(completion, events) of the playthrough; None when the agent cannot
    spawn.  Cached: archives and emitters re-evaluate identical grids often."""
    try:
        trace = astar_play(grid, node_budget=budget, alphabet=alphabet)
    except NoSpawnSurface:
        return None
    return trace.completion, trace.events


@lru_cache(maxsize=64)
def _truth_distribution(grid: TileGrid, w: int) -> PatternDistribution:
    return pattern_distribution(grid, w)


def evaluate(grid: TileGrid, cfg: BCConfig, node_budget: int = NODE_BUDGET,
             alphabet: TileAlphabet = CANONICAL_ALPHABET) -> Evaluation:
    """Fitness plus the BC vector for cfg's family.

    A scene with no spawn surface scores fitness 0 and keeps its grid-side
    BCs (event bits are all zero: there was no playthrough).
    """
    summary = _play_summary(grid, int(node_budget), alphabet)
    if summary is None:
        fitness, events = 0.0, frozenset()
    else:
        fitness, events = summary
    if cfg.family == "representation":
        bc = (float(sky_tile_count(grid, cfg.sky_threshold_row, alphabet)),
              float(enemy_count(grid, alphabet)))
    elif cfg.family == "agent":
        bc = tuple(1.0 if name in events else 0.0 for name in EVENT_ORDER)
    else:
        p = pattern_distribution(grid, cfg.window)
        bc = tuple(kl_divergence(p, _truth_distribution(t, cfg.window), cfg.epsilon)
                   for t in cfg.truths)
    return Evaluation(fitness=fitness, bc=bc)
