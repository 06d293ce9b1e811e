"""Static playability heuristics for Zelda levels."""

from __future__ import annotations

import heapq
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .level import AVATAR, DOOR, EMPTY, ENEMIES, KEY, WALL, LevelGrid

HEURISTICS = (
    "one_avatar",
    "one_key",
    "one_door",
    "enemy_density",
    "avatar_reaches_key",
    "avatar_reaches_door",
    "wall_border",
)
ENEMY_DENSITY_LIMIT = 0.6

Cell = tuple[int, int]


@dataclass(frozen=True)
class PlayabilityReport:
    verdicts: tuple[bool, ...]
    key_path: Optional[tuple[Cell, ...]] = None
    door_path: Optional[tuple[Cell, ...]] = None

    @property
    def playable(self) -> bool:
        return all(self.verdicts)

    def failed(self) -> list[str]:
        return [name for name, ok in zip(HEURISTICS, self.verdicts) if not ok]

    def as_dict(self) -> dict:
        return {
            "playable": self.playable,
            "heuristics": dict(zip(HEURISTICS, self.verdicts)),
            "key_path": [list(c) for c in self.key_path] if self.key_path else None,
            "door_path": [list(c) for c in self.door_path] if self.door_path else None,
        }


def enemy_density(grid: LevelGrid) -> float:
    """Enemies as a fraction of walkable floor (enemy + empty cells); 0 when there is no floor."""
    cells = grid.cells
    enemies = int(np.isin(cells, ENEMIES).sum())
    empty = int((cells == EMPTY).sum())
    floor = enemies + empty
    return enemies / floor if floor else 0.0


def has_wall_border(grid: LevelGrid) -> bool:
    c = grid.cells
    return bool((c[0] == WALL).all() and (c[-1] == WALL).all() and (c[:, 0] == WALL).all() and (c[:, -1] == WALL).all())


def shortest_path(grid: LevelGrid, start: Cell, goal: Cell) -> Optional[list[Cell]]:
    """A* over 4-connected moves with a Manhattan heuristic; only walls block."""
    h, w = grid.shape
    cells = grid.cells
    for r, c in (start, goal):
        if not (0 <= r < h and 0 <= c < w):
            raise IndexError(f"cell {(r, c)} outside {h}x{w} grid")
    if cells[start] == WALL or cells[goal] == WALL:
        return None
    gr, gc = goal

    def heuristic(r, c):
        return abs(r - gr) + abs(c - gc)

    came: dict[Cell, Optional[Cell]] = {start: None}
    cost = {start: 0}
    frontier = [(heuristic(*start), 0, start)]
    while frontier:
        _, g, cur = heapq.heappop(frontier)
        if cur == goal:
            path = []
            node: Optional[Cell] = cur
            while node is not None:
                path.append(node)
                node = came[node]
            return path[::-1]
        if g > cost[cur]:
            continue
        r, c = cur
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < h and 0 <= nc < w and cells[nr, nc] != WALL:
                ng = g + 1
                if ng < cost.get((nr, nc), 1 << 30):
                    cost[(nr, nc)] = ng
                    came[(nr, nc)] = cur
                    heapq.heappush(frontier, (ng + heuristic(nr, nc), ng, (nr, nc)))
    return None


def check_playability(grid: LevelGrid) -> PlayabilityReport:
    avatars = grid.positions(AVATAR)
    keys = grid.positions(KEY)
    doors = grid.positions(DOOR)
    one_avatar, one_key, one_door = len(avatars) == 1, len(keys) == 1, len(doors) == 1
    density_ok = enemy_density(grid) < ENEMY_DENSITY_LIMIT

    key_path = door_path = None
    if one_avatar and one_key and one_door:
        key_path = shortest_path(grid, avatars[0], keys[0])
        door_path = shortest_path(grid, avatars[0], doors[0])

    verdicts = (
        one_avatar,
        one_key,
        one_door,
        density_ok,
        key_path is not None,
        door_path is not None,
        has_wall_border(grid),
    )
    return PlayabilityReport(
        verdicts,
        tuple(key_path) if key_path else None,
        tuple(door_path) if door_path else None,
    )


def check_many(grids: Iterable[LevelGrid], workers: int = 1) -> list[PlayabilityReport]:
    grids = list(grids)
    if workers <= 1 or len(grids) < 64:
        return [check_playability(g) for g in grids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(check_playability, grids, chunksize=64))


def failure_histogram(reports: Iterable[PlayabilityReport]) -> dict[str, int]:
    hist = dict.fromkeys(HEURISTICS, 0)
    for rep in reports:
        for name in rep.failed():
            hist[name] += 1
    return hist
