from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cesagan.bootstrap import BootstrapConfig  # noqa: E402
from cesagan.level import LevelGrid, load_fixtures  # noqa: E402
from cesagan.training import TrainConfig, train  # noqa: E402

FIXTURE_DIR = Path(__file__).parents[1] / "src" / "cesagan" / "fixtures"


def random_grid(rng: np.random.Generator, shape=(9, 13)) -> LevelGrid:
    return LevelGrid(rng.integers(0, 8, size=shape))


def structured_grid(rng: np.random.Generator, shape=(9, 13)) -> LevelGrid:
    """A bordered room with sparse walls/enemies and usually one of each object.

    Random but far more often near-playable than a uniform grid, so both
    outcomes of every heuristic get exercised.
    """
    h, w = shape
    cells = np.where(rng.random(shape) < rng.uniform(0.1, 0.5), 0, 1)
    enemy = rng.random(shape) < rng.uniform(0.0, 0.3)
    cells[enemy] = rng.integers(4, 7, size=int(enemy.sum()))
    if rng.random() < 0.9:
        cells[0, :] = cells[-1, :] = 0
        cells[:, 0] = cells[:, -1] = 0
    for tile in (7, 2, 3):
        for _ in range(rng.choice([0, 1, 1, 1, 1, 2])):
            cells[rng.integers(1, h - 1), rng.integers(1, w - 1)] = tile
    return LevelGrid(cells)


@pytest.fixture(scope="session")
def fixtures() -> list[LevelGrid]:
    return load_fixtures()


@pytest.fixture(scope="session")
def smoke_run(fixtures):
    """500 iterations on the five fixtures with bootstrapping every 100 iterations."""
    return train(fixtures, TrainConfig(total_iterations=500, seed=11), BootstrapConfig(cadence=100))
