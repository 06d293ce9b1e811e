"""Playability, duplication, diversity and tile-distribution metrics for level sets."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .level import EMPTY, ENEMIES, NUM_TILES, WALL, LevelGrid, check_uniform
from .playability import check_many, failure_histogram

TILE_CLASSES = {"empty": (EMPTY,), "wall": (WALL,), "enemy": ENEMIES}


class EmptyInput(ValueError):
    pass


@dataclass
class TileDistribution:
    mean: float
    std: float
    histogram: dict[int, int]

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "histogram": {str(k): v for k, v in self.histogram.items()}}


@dataclass
class EvalReport:
    n_levels: int
    n_playable: int
    playable_ratio: float
    duplicate_ratio: float
    hamming_mean: Optional[float]
    hamming_std: Optional[float]
    tile_distributions: dict[str, Optional[TileDistribution]]
    rejections: dict[str, int]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["tile_distributions"] = {
            k: (v.as_dict() if v is not None else None) for k, v in self.tile_distributions.items()
        }
        return d


def per_level_mean_hamming(levels: Sequence[LevelGrid]) -> np.ndarray:
    """Mean distance from each level to every other level in the set.

    Uses per-cell tile counts: level i differs from level j at a cell unless
    j holds the same tile there, so sum_j d(i, j) = sum_cells (n - count[cell, tile_i]).
    """
    n = len(levels)
    if n < 2:
        raise ValueError("need at least two levels")
    stacked = np.stack([g.cells for g in levels]).reshape(n, -1).astype(np.intp)
    cells = stacked.shape[1]
    counts = np.zeros((cells, NUM_TILES), dtype=np.int64)
    cell_idx = np.arange(cells)
    for row in stacked:
        counts[cell_idx, row] += 1
    same = counts[cell_idx[None, :], stacked].sum(axis=1)
    totals = n * cells - same
    return totals / (n - 1)


def duplicate_ratio(levels: Sequence[LevelGrid], reference: Sequence[LevelGrid] | None = None) -> float:
    """1 - distinct/total; levels equal to a reference level never count as distinct."""
    ref = {g.key() for g in reference} if reference else set()
    distinct = {g.key() for g in levels} - ref
    return (len(levels) - len(distinct)) / len(levels)


def tile_distribution(levels: Sequence[LevelGrid], tile_class: str) -> TileDistribution:
    if not levels:
        raise EmptyInput("no levels")
    try:
        tiles = TILE_CLASSES[tile_class]
    except KeyError:
        raise ValueError(f"tile_class must be one of {sorted(TILE_CLASSES)}") from None
    counts = np.array([int(np.isin(g.cells, tiles).sum()) for g in levels])
    values, freq = np.unique(counts, return_counts=True)
    return TileDistribution(
        float(counts.mean()), float(counts.std()), {int(v): int(f) for v, f in zip(values, freq)}
    )


def evaluate_set(
    levels: Sequence[LevelGrid], reference: Sequence[LevelGrid] | None = None, workers: int = 1
) -> EvalReport:
    """Playable/duplicate ratios over all levels; diversity and tile counts over playable ones."""
    levels = list(levels)
    if not levels:
        raise EmptyInput("no levels to evaluate")
    check_uniform(levels)
    reports = check_many(levels, workers=workers)
    playable = [g for g, r in zip(levels, reports) if r.playable]

    h_mean = h_std = None
    if len(playable) >= 2:
        per_level = per_level_mean_hamming(playable)
        h_mean, h_std = float(per_level.mean()), float(per_level.std())

    return EvalReport(
        n_levels=len(levels),
        n_playable=len(playable),
        playable_ratio=len(playable) / len(levels),
        duplicate_ratio=duplicate_ratio(levels, reference),
        hamming_mean=h_mean,
        hamming_std=h_std,
        tile_distributions={k: tile_distribution(playable, k) if playable else None for k in TILE_CLASSES},
        rejections=failure_histogram(reports),
    )
