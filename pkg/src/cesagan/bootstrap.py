"""Grow the training corpus with playable, non-duplicate generated levels."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .level import DimensionMismatch, LevelGrid, decode_onehot, extract_features
from .playability import HEURISTICS, check_playability

HUMAN = "human"
BOOTSTRAPPED = "bootstrapped"
REJECTION_REASONS = HEURISTICS + ("duplicate_corpus", "duplicate_round", "corpus_full")


@dataclass(frozen=True)
class BootstrapConfig:
    cadence: int = 100
    candidates_per_round: int = 32
    max_corpus_size: int = 500
    min_hamming_to_corpus: int = 1

    def __post_init__(self):
        if self.cadence < 1 or self.candidates_per_round < 1 or self.min_hamming_to_corpus < 1:
            raise ValueError("cadence, candidates_per_round and min_hamming_to_corpus must all be >= 1")
        if self.max_corpus_size < 0:
            raise ValueError("max_corpus_size must be >= 0 (0 = unlimited)")


def hamming(a: LevelGrid, b: LevelGrid) -> int:
    """Number of cells at which two equally sized levels differ."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare {a.shape} with {b.shape}")
    return int(np.count_nonzero(a.cells != b.cells))


@dataclass(frozen=True)
class Origin:
    kind: str
    round: int | None = None


@dataclass
class CorpusState:
    levels: list[LevelGrid] = field(default_factory=list)
    origins: list[Origin] = field(default_factory=list)
    keys: set[bytes] = field(default_factory=set)

    @classmethod
    def from_human(cls, levels: list[LevelGrid]) -> "CorpusState":
        state = cls()
        for lvl in levels:
            if lvl.key() in state.keys:
                continue
            state.append(lvl, Origin(HUMAN))
        return state

    def __len__(self):
        return len(self.levels)

    def append(self, level: LevelGrid, origin: Origin) -> None:
        if level.key() in self.keys:
            raise ValueError("level already in corpus")
        self.levels.append(level)
        self.origins.append(origin)
        self.keys.add(level.key())

    def human_levels(self) -> list[LevelGrid]:
        return [lvl for lvl, o in zip(self.levels, self.origins) if o.kind == HUMAN]

    def human_features(self) -> np.ndarray:
        return np.stack([extract_features(g) for g in self.human_levels()])

    def min_hamming(self, level: LevelGrid) -> int | None:
        if not self.levels:
            return None
        stacked = np.stack([g.cells for g in self.levels])
        if stacked.shape[1:] != level.shape:
            raise DimensionMismatch(f"candidate {level.shape} vs corpus {stacked.shape[1:]}")
        return int((stacked != level.cells).sum(axis=(1, 2)).min())

    def manifest(self) -> list[dict]:
        return [asdict(o) for o in self.origins]


@dataclass
class RoundReport:
    round: int
    candidates: int
    survivors: int
    rejections: dict[str, int]
    corpus_size: int

    def as_record(self) -> dict:
        return {"type": "bootstrap_round", **asdict(self)}


def admit_candidates(
    corpus: CorpusState, candidates: list[LevelGrid], config: BootstrapConfig, round_index: int
) -> RoundReport:
    """Filter candidates and append the survivors to ``corpus`` in candidate order.

    Each rejected candidate is charged to one reason: the first failing
    heuristic, then a too-close corpus level, then a too-close survivor from
    this round, then the corpus cap.
    """
    rejections = dict.fromkeys(REJECTION_REASONS, 0)
    accepted: list[LevelGrid] = []
    threshold = config.min_hamming_to_corpus
    cap = config.max_corpus_size
    for cand in candidates:
        report = check_playability(cand)
        if not report.playable:
            rejections[report.failed()[0]] += 1
            continue
        closest = corpus.min_hamming(cand)
        if closest is not None and closest < threshold:
            rejections["duplicate_corpus"] += 1
            continue
        if any(hamming(cand, a) < threshold for a in accepted):
            rejections["duplicate_round"] += 1
            continue
        if cap and len(corpus) + len(accepted) >= cap:
            rejections["corpus_full"] += 1
            continue
        accepted.append(cand)
    for lvl in accepted:
        corpus.append(lvl, Origin(BOOTSTRAPPED, round_index))
    return RoundReport(round_index, len(candidates), len(accepted), rejections, len(corpus))


def sample_levels(params, n: int, rng: np.random.Generator, pool: np.ndarray | None = None, u=None) -> list[LevelGrid]:
    """Draw n levels from the generator in eval mode.

    ``u`` fixes the conditioning vector for every sample; otherwise rows are
    drawn uniformly from ``pool`` (default: the checkpoint's conditioning pool).
    """
    cfg = params.config
    dtype = params.generator.params["proj.w"].dtype
    z = rng.uniform(-1.0, 1.0, size=(n, cfg.latent_dim)).astype(dtype)
    if u is not None:
        feats = np.broadcast_to(np.asarray(u, dtype=np.int64), (n, len(u)))
    else:
        pool = params.conditioning_pool if pool is None else pool
        if len(pool) == 0:
            raise ValueError("no conditioning vectors available; pass u explicitly")
        feats = pool[rng.integers(0, len(pool), size=n)]
    logits = params.generator.forward(z, feats, mode="eval").data
    return [decode_onehot(x) for x in logits]


def bootstrap_round(
    params, corpus: CorpusState, config: BootstrapConfig, rng: np.random.Generator, round_index: int
) -> RoundReport:
    """Sample candidates conditioned on human-level features and admit the survivors."""
    candidates = sample_levels(params, config.candidates_per_round, rng, pool=corpus.human_features())
    return admit_candidates(corpus, candidates, config, round_index)
