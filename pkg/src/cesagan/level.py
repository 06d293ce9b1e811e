"""Zelda tile grids: ASCII codec, one-hot encoding, feature counts."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

WALL, EMPTY, KEY, DOOR, ENEMY1, ENEMY2, ENEMY3, AVATAR = range(8)
NUM_TILES = 8
SYMBOLS = "w.+g123A"
SYMBOL_TO_ID = {s: i for i, s in enumerate(SYMBOLS)}
TILE_NAMES = ("wall", "empty", "key", "door", "enemy1", "enemy2", "enemy3", "avatar")
ENEMIES = (ENEMY1, ENEMY2, ENEMY3)

CANONICAL_HEIGHT = 9
CANONICAL_WIDTH = 13


class LevelError(ValueError):
    """Base class for malformed level input."""


class RaggedLines(LevelError):
    pass


class UnknownSymbol(LevelError):
    def __init__(self, symbol: str, row: int, col: int):
        super().__init__(f"unknown tile symbol {symbol!r} at row {row}, col {col}")
        self.symbol = symbol
        self.row = row
        self.col = col


class NonFiniteInput(LevelError):
    pass


class DimensionMismatch(LevelError):
    pass


@dataclass(frozen=True, eq=False)
class LevelGrid:
    """Immutable H x W grid of tile ids (uint8)."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.uint8, copy=True)
        if cells.ndim != 2:
            raise LevelError(f"level must be 2-D, got shape {cells.shape}")
        if cells.shape[0] < 3 or cells.shape[1] < 3:
            raise LevelError(f"level must be at least 3x3, got {cells.shape}")
        if cells.max(initial=0) >= NUM_TILES:
            raise LevelError("cell value outside tile range 0..7")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def key(self) -> bytes:
        """Hashable canonical form, used for duplicate detection."""
        return self.shape[0].to_bytes(2, "little") + self.shape[1].to_bytes(2, "little") + self.cells.tobytes()

    def positions(self, tile: int) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.cells == tile)
        return list(zip(rows.tolist(), cols.tolist()))

    def __eq__(self, other):
        if not isinstance(other, LevelGrid):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.cells, other.cells))

    def __hash__(self):
        return hash(self.key())

    def __str__(self):
        return serialize_level(self)


def parse_level(text: str) -> LevelGrid:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise LevelError("empty level text")
    width = len(lines[0])
    rows = []
    for r, line in enumerate(lines):
        if not line:
            raise RaggedLines(f"line {r} is empty")
        if len(line) != width:
            raise RaggedLines(f"line {r} has length {len(line)}, expected {width}")
        row = []
        for c, ch in enumerate(line):
            try:
                row.append(SYMBOL_TO_ID[ch])
            except KeyError:
                raise UnknownSymbol(ch, r, c) from None
        rows.append(row)
    return LevelGrid(np.array(rows, dtype=np.uint8))


def serialize_level(grid: LevelGrid) -> str:
    lut = np.array(list(SYMBOLS))
    return "\n".join("".join(row) for row in lut[grid.cells])


def read_level(path: str | Path) -> LevelGrid:
    return parse_level(Path(path).read_text())


def write_level(grid: LevelGrid, path: str | Path) -> None:
    Path(path).write_text(serialize_level(grid) + "\n")


def load_corpus(directory: str | Path) -> list[LevelGrid]:
    """Every ``*.txt`` file in ``directory``, sorted by file name."""
    return [read_level(p) for p in sorted(Path(directory).glob("*.txt"))]


def fixture_paths() -> list[Path]:
    root = resources.files("cesagan") / "fixtures"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".txt"))


def load_fixtures() -> list[LevelGrid]:
    """The five bundled Zelda levels."""
    return [read_level(p) for p in fixture_paths()]


def encode_onehot(grid: LevelGrid, dtype=np.float32) -> np.ndarray:
    """[8, H, W] array with channel t set where the cell holds tile t."""
    out = np.zeros((NUM_TILES,) + grid.shape, dtype=dtype)
    rows, cols = np.indices(grid.shape)
    out[grid.cells, rows, cols] = 1
    return out


def decode_onehot(logits: np.ndarray) -> LevelGrid:
    """Argmax over the channel axis; np.argmax returns the lowest index on ties."""
    logits = np.asarray(logits)
    if logits.ndim != 3 or logits.shape[0] != NUM_TILES:
        raise DimensionMismatch(f"expected [8, H, W] logits, got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("logits contain NaN or Inf")
    return LevelGrid(np.argmax(logits, axis=0).astype(np.uint8))


def extract_features(grid: LevelGrid) -> np.ndarray:
    """Per-tile counts (int64, length 8)."""
    return np.bincount(grid.cells.ravel(), minlength=NUM_TILES).astype(np.int64)


def stack_onehot(grids: list[LevelGrid], dtype=np.float32) -> np.ndarray:
    return np.stack([encode_onehot(g, dtype) for g in grids])


def check_uniform(grids: list[LevelGrid]) -> tuple[int, int]:
    shapes = {g.shape for g in grids}
    if len(shapes) != 1:
        raise DimensionMismatch(f"levels have mixed dimensions: {sorted(shapes)}")
    return shapes.pop()
