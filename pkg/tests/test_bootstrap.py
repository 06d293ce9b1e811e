import numpy as np
import pytest

from cesagan.bootstrap import (
    BOOTSTRAPPED,
    HUMAN,
    BootstrapConfig,
    CorpusState,
    admit_candidates,
    bootstrap_round,
    hamming,
)
from cesagan.level import DimensionMismatch, LevelGrid, extract_features, parse_level
from cesagan.nets import ArchConfig, NetworkParams
from cesagan.playability import check_playability
from conftest import random_grid, structured_grid
from oracles import naive_hamming

ROOM = [
    "wwwwwwwwwwwww",
    "w...........w",
    "w...........w",
    "w...........w",
    "w...........w",
    "w...........w",
    "w...........w",
    "w...........w",
    "wwwwwwwwwwwww",
]


def room(a, k, d, extra=()):
    rows = [list(r) for r in ROOM]
    for (r, c), ch in zip((a, k, d), "A+g"):
        rows[r][c] = ch
    for (r, c), ch in extra:
        rows[r][c] = ch
    return parse_level("\n".join("".join(r) for r in rows))


def test_hamming_examples():
    g = room((1, 1), (2, 2), (3, 3))
    assert hamming(g, g) == 0
    assert hamming(g, room((1, 1), (2, 2), (3, 4))) == 2
    cells = g.cells.copy()
    cells[4, 4] = 5
    assert hamming(g, LevelGrid(cells)) == 1
    with pytest.raises(DimensionMismatch):
        hamming(g, parse_level("www\nwAw\nwww"))


def test_hamming_matches_naive_loop():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = random_grid(rng), structured_grid(rng)
        assert hamming(a, b) == naive_hamming(a.cells, b.cells)


def test_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(cadence=0)
    with pytest.raises(ValueError):
        BootstrapConfig(min_hamming_to_corpus=0)


def test_degenerate_generator_admits_nothing(fixtures):
    params = NetworkParams.init(ArchConfig(), 0)
    g = params.generator
    g.params["out.w"].data[:] = 0
    g.params["out.b"].data[:] = 0
    g.params["out.b"].data[0] = 5.0  # every cell argmaxes to wall
    params.generator.forward(np.zeros((2, 32), np.float32), np.stack([extract_features(fixtures[0])] * 2), "train")
    corpus = CorpusState.from_human(fixtures)
    rep = bootstrap_round(params, corpus, BootstrapConfig(candidates_per_round=10), np.random.default_rng(0), 1)
    assert rep.survivors == 0 and len(corpus) == 5
    assert rep.rejections["one_avatar"] == 10


def test_duplicate_of_human_level_rejected(fixtures):
    corpus = CorpusState.from_human(fixtures)
    rep = admit_candidates(corpus, [fixtures[2]], BootstrapConfig(), 1)
    assert rep.survivors == 0 and rep.rejections["duplicate_corpus"] == 1


def test_three_of_ten_admitted(fixtures):
    good = [room((1, 1), (2, 5), (7, 11)), room((4, 4), (1, 11), (7, 1)), room((2, 2), (6, 6), (1, 10))]
    bad = [
        parse_level("\n".join(ROOM)),  # nothing placed
        room((1, 1), (2, 5), (7, 11), [((3, 3), "A")]),  # two avatars
        room((1, 1), (2, 5), (7, 11), [((5, 5), "+")]),  # two keys
        room((1, 1), (2, 5), (7, 11), [((0, 4), ".")]),  # hole in border
        room((1, 1), (7, 10), (3, 3), [((r, 9), "w") for r in range(1, 8)] + [((r, 11), "w") for r in range(1, 8)]),
        good[0],  # duplicate within the round
        fixtures[0],  # duplicate of a human level
    ]
    for g in good:
        assert check_playability(g).playable
    candidates = [bad[0], good[0], bad[1], bad[2], good[1], bad[3], bad[4], good[2], bad[5], bad[6]]
    corpus = CorpusState.from_human(fixtures)
    rep = admit_candidates(corpus, candidates, BootstrapConfig(), 1)
    assert rep.survivors == 3 and len(corpus) == 8
    assert corpus.levels[5:] == good
    assert [o.kind for o in corpus.origins] == [HUMAN] * 5 + [BOOTSTRAPPED] * 3
    assert rep.rejections["duplicate_round"] == 1 and rep.rejections["duplicate_corpus"] == 1
    assert rep.rejections["avatar_reaches_key"] == 1
    assert sum(rep.rejections.values()) == 7


def test_min_hamming_threshold(fixtures):
    base = room((1, 1), (2, 5), (7, 11))
    near = room((1, 1), (2, 5), (7, 10))  # 2 cells away
    corpus = CorpusState.from_human([base])
    rep = admit_candidates(corpus, [near], BootstrapConfig(min_hamming_to_corpus=3), 1)
    assert rep.survivors == 0 and rep.rejections["duplicate_corpus"] == 1
    rep = admit_candidates(corpus, [near], BootstrapConfig(min_hamming_to_corpus=2), 2)
    assert rep.survivors == 1


def test_corpus_cap(fixtures):
    corpus = CorpusState.from_human(fixtures)
    cands = [room((1, 1), (2, c), (7, 11)) for c in range(3, 10)]
    rep = admit_candidates(corpus, cands, BootstrapConfig(max_corpus_size=8), 1)
    assert rep.survivors == 3 and len(corpus) == 8 and rep.rejections["corpus_full"] == 4
    rep = admit_candidates(corpus, [room((4, 4), (1, 11), (7, 1))], BootstrapConfig(max_corpus_size=8), 2)
    assert rep.survivors == 0 and len(corpus) == 8
    assert corpus.human_levels() == fixtures
