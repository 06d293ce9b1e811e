"""Conditional-embedding self-attention GAN for tile-based game levels."""

from .level import LevelGrid, decode_onehot, encode_onehot, extract_features, parse_level, serialize_level
from .playability import PlayabilityReport, check_playability, shortest_path

__all__ = [
    "LevelGrid",
    "PlayabilityReport",
    "check_playability",
    "decode_onehot",
    "encode_onehot",
    "extract_features",
    "parse_level",
    "serialize_level",
    "shortest_path",
]
__version__ = "0.1.0"
