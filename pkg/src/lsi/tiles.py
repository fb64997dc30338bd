"""Scene representation: tile alphabet, 16x56 grids, one-hot codec.

A scene is a 16x56 grid of tile indices (row 0 is the top of the scene).
Indices point into a 17-symbol alphabet; the position of a symbol in the
alphabet is also its channel in the one-hot tensor fed to / produced by the
generator.  The generator works on 17x64x64 tensors; the scene occupies the
top-left 16x56 window and the padding region is one-hot on the empty tile.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

ROWS = 16
COLS = 56
CHANNELS = 17
OUT_H = 64
OUT_W = 64

TILE_CLASSES = frozenset(
    {
        "empty",
        "solid",
        "breakable",
        "question-coin",
        "question-mushroom",
        "coin",
        "enemy-goomba",
        "enemy-koopa",
        "enemy-winged",
        "pipe-part",
        "bullet-head",
        "platform",
    }
)

# Classes an agent or enemy can stand on / is blocked by.
SOLID_CLASSES = frozenset(
    {
        "solid",
        "breakable",
        "question-coin",
        "question-mushroom",
        "pipe-part",
        "bullet-head",
        "platform",
    }
)

ENEMY_CLASSES = frozenset({"enemy-goomba", "enemy-koopa", "enemy-winged"})

# Canonical symbol table.  The symbol set is a convention of this package
# (only the count and the class vocabulary are fixed externally); it can be
# replaced wholesale via load_alphabet().
CANONICAL_SYMBOLS = (
    ("-", "empty"),
    ("X", "solid"),
    ("#", "solid"),
    ("S", "breakable"),
    ("?", "question-coin"),
    ("Q", "question-mushroom"),
    ("o", "coin"),
    ("g", "enemy-goomba"),
    ("k", "enemy-koopa"),
    ("y", "enemy-winged"),
    ("<", "pipe-part"),
    (">", "pipe-part"),
    ("[", "pipe-part"),
    ("]", "pipe-part"),
    ("B", "bullet-head"),
    ("b", "solid"),
    ("%", "platform"),
)


class SceneFormatError(ValueError):
    pass


class UnknownSymbol(SceneFormatError):
    def __init__(self, char: str, line: int, col: int):
        super().__init__(f"unknown symbol {char!r} at line {line}, col {col}")
        self.char = char
        self.line = line
        self.col = col


class WrongLineCount(SceneFormatError):
    def __init__(self, n: int):
        super().__init__(f"expected {ROWS} lines, got {n}")
        self.n = n


class WrongLineWidth(SceneFormatError):
    def __init__(self, line: int, width: int):
        super().__init__(f"line {line} has width {width}, expected {COLS}")
        self.line = line
        self.width = width


class BadAlphabet(ValueError):
    pass


@dataclass(frozen=True)
class TileAlphabet:
    """Ordered (char, class) pairs; list position is the channel index."""

    symbols: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if len(self.symbols) != CHANNELS:
            raise BadAlphabet(f"alphabet needs {CHANNELS} symbols, got {len(self.symbols)}")
        chars = [c for c, _ in self.symbols]
        if len(set(chars)) != CHANNELS:
            raise BadAlphabet("duplicate symbols in alphabet")
        for c, cls in self.symbols:
            if len(c) != 1:
                raise BadAlphabet(f"symbol {c!r} is not a single character")
            if cls not in TILE_CLASSES:
                raise BadAlphabet(f"unknown tile class {cls!r}")
        if "empty" not in {cls for _, cls in self.symbols}:
            raise BadAlphabet("alphabet has no empty tile")

    @property
    def chars(self) -> str:
        return "".join(c for c, _ in self.symbols)

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(cls for _, cls in self.symbols)

    def index_of(self, char: str) -> int:
        return self.chars.index(char)

    @property
    def empty_index(self) -> int:
        return self.classes.index("empty")

    def class_of(self, index: int) -> str:
        return self.symbols[index][1]

    @property
    def solid(self) -> tuple[bool, ...]:
        return tuple(cls in SOLID_CLASSES for cls in self.classes)

    @property
    def enemy(self) -> tuple[bool, ...]:
        return tuple(cls in ENEMY_CLASSES for cls in self.classes)


CANONICAL_ALPHABET = TileAlphabet(CANONICAL_SYMBOLS)


def load_alphabet(path) -> TileAlphabet:
    """Read an alphabet override: INI file, [alphabet] section, char = class.

    Comment handling and interpolation are off so symbols like '#', ';' and
    '%' can appear as keys.  The delimiter characters '=' and ':' cannot be
    mapped from a file; build the TileAlphabet in code for those.
    """
    cp = configparser.ConfigParser(comment_prefixes=(), interpolation=None)
    cp.optionxform = str  # symbols are case sensitive
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    if not cp.has_section("alphabet"):
        raise BadAlphabet(f"{path}: missing [alphabet] section")
    pairs = tuple((char, cls.strip()) for char, cls in cp.items("alphabet"))
    return TileAlphabet(pairs)


@dataclass(frozen=True)
class TileGrid:
    """16x56 array of tile indices, row-major, row 0 at the top."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.uint8)
        if cells.shape != (ROWS, COLS):
            raise SceneFormatError(f"grid shape {cells.shape}, expected {(ROWS, COLS)}")
        object.__setattr__(self, "cells", cells)

    def tobytes(self) -> bytes:
        return self.cells.tobytes()

    def __eq__(self, other):
        return isinstance(other, TileGrid) and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash(self.tobytes())


def parse_scene(text: str, alphabet: TileAlphabet = CANONICAL_ALPHABET,
                fit_width: bool = False) -> TileGrid:
    """Parse 16 newline-terminated rows of symbols into a TileGrid.

    With fit_width, short lines are padded with the empty symbol and long
    lines truncated to 56 columns; otherwise any deviation is an error.
    """
    lines = text.splitlines()
    if len(lines) != ROWS:
        raise WrongLineCount(len(lines))
    lookup = {c: i for i, (c, _) in enumerate(alphabet.symbols)}
    empty = alphabet.empty_index
    cells = np.full((ROWS, COLS), empty, dtype=np.uint8)
    for r, line in enumerate(lines):
        if fit_width:
            line = line[:COLS]
        elif len(line) != COLS:
            raise WrongLineWidth(r, len(line))
        for c, ch in enumerate(line):
            idx = lookup.get(ch)
            if idx is None:
                raise UnknownSymbol(ch, r, c)
            cells[r, c] = idx
    return TileGrid(cells)


def render_scene(grid: TileGrid, alphabet: TileAlphabet = CANONICAL_ALPHABET) -> str:
    """Inverse of parse_scene; every row ends with a newline."""
    chars = alphabet.chars
    return "".join(
        "".join(chars[i] for i in row) + "\n" for row in grid.cells
    )


def one_hot_encode(grid: TileGrid, alphabet: TileAlphabet = CANONICAL_ALPHABET) -> np.ndarray:
    """17x64x64 float32 tensor; scene top-left, padding one-hot on empty."""
    out = np.zeros((CHANNELS, OUT_H, OUT_W), dtype=np.float32)
    out[alphabet.empty_index, :, :] = 1.0
    rr, cc = np.indices((ROWS, COLS))
    out[:, :ROWS, :COLS] = 0.0
    out[grid.cells, rr, cc] = 1.0
    return out


def crop_output(raw: np.ndarray) -> TileGrid:
    """Argmax over channels in the top-left 16x56 window.

    Ties resolve to the lowest channel index (argmax picks the first hit).
    """
    raw = np.asarray(raw)
    if raw.shape != (CHANNELS, OUT_H, OUT_W):
        raise ValueError(f"raw tensor shape {raw.shape}, expected {(CHANNELS, OUT_H, OUT_W)}")
    window = raw[:, :ROWS, :COLS]
    return TileGrid(np.argmax(window, axis=0).astype(np.uint8))
