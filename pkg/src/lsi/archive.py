"""Tessellated elite archives with Coverage, QD-score and validity metrics.

An archive maps BC-space cells to the best elite seen in each cell.  The
same machinery stores the pseudo-archives of the non-QD baselines: their
evaluations run through try_insert too, giving the identical coverage and
QD-score accounting.

Cell layout is a uniform grid per dimension with edge clamping, so every
evaluation lands somewhere.  Fitness ties reject the challenger, which
keeps archives stable and runs reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .generator import LATENT_DIM
from .metrics import Evaluation
from .tiles import TileGrid

NEW_CELL = "new-cell"
IMPROVED = "improved"
REJECTED = "rejected"


class DimensionMismatch(ValueError):
    pass


class EmptyArchive(LookupError):
    pass


class NotTwoDimensional(ValueError):
    pass


@dataclass(frozen=True)
class MapConfig:
    """Per-dimension (lower, upper, bins) plus the family tag."""

    family: str
    dims: tuple

    def __post_init__(self):
        if not self.dims:
            raise ValueError("map needs at least one dimension")
        for lo, hi, bins in self.dims:
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError("map bounds must be finite")
            if not lo < hi:
                raise ValueError(f"lower bound {lo} not below upper {hi}")
            if bins < 1:
                raise ValueError(f"bin count {bins} < 1")

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        out = 1
        for _, _, bins in self.dims:
            out *= bins
        return out


def preset(family: str) -> MapConfig:
    """The three map geometries used throughout: sky x enemies at 151x26,
    the 8-bit event hypercube, and the 60x60 KL plane."""
    if family == "representation":
        return MapConfig(family, ((0.0, 150.0, 151), (0.0, 25.0, 26)))
    if family == "agent":
        return MapConfig(family, ((0.0, 1.0, 2),) * 8)
    if family == "kl":
        return MapConfig(family, ((0.0, 4.5, 60), (0.0, 4.5, 60)))
    raise ValueError(f"unknown archive family {family!r}")


def bc_to_cell(cfg: MapConfig, bc) -> tuple:
    """clamp(floor((bc - lo) / (hi - lo) * bins), 0, bins - 1) per dimension.

    With the representation preset this is the identity on in-range integer
    counts: floor(v * 151 / 150) == v for v in 0..149, and 150 clamps back.
    """
    if len(bc) != len(cfg.dims):
        raise DimensionMismatch(
            f"bc has {len(bc)} dims, map has {len(cfg.dims)}")
    cell = []
    for v, (lo, hi, bins) in zip(bc, cfg.dims):
        i = int(math.floor((v - lo) / (hi - lo) * bins))
        cell.append(min(max(i, 0), bins - 1))
    return tuple(cell)


@dataclass(frozen=True)
class Elite:
    latent: tuple
    grid_hash: str
    evaluation: Evaluation
    cell: tuple
    discovered_at: int


@dataclass(frozen=True)
class InsertResult:
    kind: str
    delta: float = 0.0


@dataclass
class Archive:
    config: MapConfig
    cells: dict = field(default_factory=dict)
    evaluations: int = 0
    insertions: int = 0

    def __len__(self):
        return len(self.cells)


def grid_fingerprint(grid: TileGrid) -> str:
    return hashlib.sha256(grid.tobytes()).hexdigest()[:16]


def make_elite(latent, grid: TileGrid, evaluation: Evaluation,
               cfg: MapConfig, discovered_at: int) -> Elite:
    z = tuple(float(v) for v in latent)
    if len(z) != LATENT_DIM:
        raise ValueError(f"latent length {len(z)}, expected {LATENT_DIM}")
    return Elite(z, grid_fingerprint(grid), evaluation,
                 bc_to_cell(cfg, evaluation.bc), discovered_at)


def try_insert(archive: Archive, candidate: Elite) -> InsertResult:
    """Elitism with tie rejection; counts every attempt as an evaluation."""
    cell = candidate.cell
    dims = archive.config.dims
    if len(cell) != len(dims):
        raise DimensionMismatch(
            f"cell has {len(cell)} dims, map has {len(dims)}")
    archive.evaluations += 1
    held = archive.cells.get(cell)
    if held is None:
        archive.cells[cell] = candidate
        archive.insertions += 1
        return InsertResult(NEW_CELL, candidate.evaluation.fitness)
    delta = candidate.evaluation.fitness - held.evaluation.fitness
    if delta > 0:
        archive.cells[cell] = candidate
        archive.insertions += 1
        return InsertResult(IMPROVED, delta)
    return InsertResult(REJECTED)


def coverage(archive: Archive) -> float:
    return len(archive.cells) / archive.config.n_cells


def qd_score(archive: Archive) -> float:
    return sum(e.evaluation.fitness for e in archive.cells.values())


def valid_stats(archive: Archive) -> tuple:
    """(valid / map size, valid / filled); an elite is valid at fitness 1.0."""
    valid = sum(1 for e in archive.cells.values() if e.evaluation.fitness == 1.0)
    found = len(archive.cells)
    return (valid / archive.config.n_cells, valid / found if found else 0.0)


def random_elite(archive: Archive, rng) -> Elite:
    """Uniform over filled cells (dict order is insertion order, which is
    deterministic for a deterministic insertion sequence)."""
    if not archive.cells:
        raise EmptyArchive("archive holds no elites")
    keys = list(archive.cells)
    return archive.cells[keys[int(rng.integers(len(keys)))]]


# ---------------------------------------------------------------------------
# serialization

def _csv_header(cfg: MapConfig) -> list:
    d = cfg.n_dims
    return ([f"cell_idx_{i}" for i in range(d)]
            + [f"bc_{i}" for i in range(d)]
            + ["fitness"]
            + [f"latent_{i}" for i in range(LATENT_DIM)]
            + ["discovered_at"])


def export_csv(archive: Archive, path) -> None:
    """One row per elite, sorted by cell index; floats via repr so repeated
    exports of equal archives are byte-identical."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_csv_header(archive.config))
        for cell in sorted(archive.cells):
            e = archive.cells[cell]
            w.writerow(list(cell)
                       + [repr(float(v)) for v in e.evaluation.bc]
                       + [repr(float(e.evaluation.fitness))]
                       + [repr(float(v)) for v in e.latent]
                       + [e.discovered_at])


def load_csv(path, cfg: MapConfig) -> Archive:
    """Rebuild an archive from export_csv output.  Grid hashes are not part
    of the format and come back empty; counters reflect only stored rows."""
    archive = Archive(cfg)
    d = cfg.n_dims
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != _csv_header(cfg):
            raise ValueError(f"{path}: header does not match a "
                             f"{cfg.family} archive export")
        for row in r:
            cell = tuple(int(v) for v in row[:d])
            bc = tuple(float(v) for v in row[d:2 * d])
            fitness = float(row[2 * d])
            latent = tuple(float(v) for v in row[2 * d + 1:2 * d + 1 + LATENT_DIM])
            disc = int(row[2 * d + 1 + LATENT_DIM])
            archive.cells[cell] = Elite(latent, "", Evaluation(fitness, bc),
                                        cell, disc)
    archive.evaluations = archive.insertions = len(archive.cells)
    return archive


def heatmap_grid(archive: Archive) -> np.ndarray:
    """Fitness per cell for a 2-D map, -1.0 where empty; axis 0 follows the
    map's first dimension."""
    if archive.config.n_dims != 2:
        raise NotTwoDimensional(
            f"heatmap needs a 2-D map, got {archive.config.n_dims} dims")
    (_, _, b0), (_, _, b1) = archive.config.dims
    out = np.full((b0, b1), -1.0)
    for (i, j), e in archive.cells.items():
        out[i, j] = e.evaluation.fitness
    return out


def export_heatmap_csv(archive: Archive, path) -> None:
    grid = heatmap_grid(archive)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in grid:
            w.writerow([repr(float(v)) for v in row])


def export_heatmap_ppm(archive: Archive, path) -> None:
    """Binary PPM; empty cells black, elites on a gray ramp 55..255."""
    grid = heatmap_grid(archive)
    h, w = grid.shape
    level = np.where(grid < 0, 0, 55 + np.rint(grid * 200)).astype(np.uint8)
    rgb = np.repeat(level[:, :, None], 3, axis=2)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
