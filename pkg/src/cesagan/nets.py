"""Generator and discriminator with self-attention and feature-vector conditioning."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import RunningStats, Tensor
from .level import CANONICAL_HEIGHT, CANONICAL_WIDTH, NUM_TILES

# Attention weights for output position j are normalized over source positions i.
ATTENTION_SOFTMAX_AXIS = "source"


@dataclass(frozen=True)
class ArchConfig:
    height: int = CANONICAL_HEIGHT
    width: int = CANONICAL_WIDTH
    latent_dim: int = 32
    channels: int = 32
    embed_hidden: int = 16
    embed_dim: int = 8
    attention_reduction: int = 8
    attention: bool = True
    conditioning: bool = True
    positional_bias: bool = True
    init_std: float = 0.02

    @property
    def qk_channels(self) -> int:
        return max(1, self.channels // self.attention_reduction)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**d)


def _normal(rng: np.random.Generator, shape, std, dtype, name) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True, name=name)


def _zeros(shape, dtype, name) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)


def _ones(shape, dtype, name) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True, name=name)


@dataclass
class SelfAttentionParams:
    w_f: Tensor
    w_g: Tensor
    w_h: Tensor
    w_v: Tensor
    merge_weight: Tensor

    @classmethod
    def init(cls, channels: int, qk: int, rng, std=0.02, dtype=np.float32, prefix="attn"):
        return cls(
            w_f=_normal(rng, (qk, channels), std, dtype, f"{prefix}.w_f"),
            w_g=_normal(rng, (qk, channels), std, dtype, f"{prefix}.w_g"),
            w_h=_normal(rng, (channels, channels), std, dtype, f"{prefix}.w_h"),
            w_v=_normal(rng, (channels, channels), std, dtype, f"{prefix}.w_v"),
            merge_weight=_zeros((), dtype, f"{prefix}.merge_weight"),
        )

    def tensors(self) -> list[Tensor]:
        return [self.w_f, self.w_g, self.w_h, self.w_v, self.merge_weight]


@dataclass
class EmbeddingParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, hidden: int, out: int, rng, std=0.02, dtype=np.float32, prefix="embed"):
        return cls(
            w1=_normal(rng, (hidden, NUM_TILES), std, dtype, f"{prefix}.w1"),
            b1=_zeros((hidden,), dtype, f"{prefix}.b1"),
            w2=_normal(rng, (out, hidden), std, dtype, f"{prefix}.w2"),
            b2=_zeros((out,), dtype, f"{prefix}.b2"),
        )

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def self_attention(x: Tensor, p: SelfAttentionParams) -> tuple[Tensor, Tensor]:
    """Non-local attention over all grid positions with a residual merge.

    ``x`` is [N, C, H, W].  Returns ``(x + merge_weight * o, beta)`` where
    ``beta[n, j, i]`` is the weight output position j puts on source i.
    """
    if x.data.ndim != 4 or x.shape[1] != p.w_h.shape[1]:
        raise ad.ShapeMismatch(f"self_attention: input {x.shape} does not match {p.w_h.shape[1]} channels")
    n, c, h, w = x.shape
    positions = h * w
    qk = p.w_f.shape[0]
    f = ad.reshape(ad.conv1x1(x, p.w_f), (n, qk, positions))
    g = ad.reshape(ad.conv1x1(x, p.w_g), (n, qk, positions))
    v_in = ad.reshape(ad.conv1x1(x, p.w_h), (n, c, positions))
    # scores[n, j, i] = g(x_j) . f(x_i), i.e. s_{i,j} laid out with j as the row
    scores = ad.matmul(ad.transpose(g, (0, 2, 1)), f)
    beta = ad.softmax_rows(scores)
    attended = ad.matmul(v_in, ad.transpose(beta, (0, 2, 1)))
    o = ad.conv1x1(ad.reshape(attended, (n, c, h, w)), p.w_v)
    return ad.scale_add(x, o, p.merge_weight), beta


def embed_features(u: np.ndarray, p: EmbeddingParams, cells: int) -> Tensor:
    """MLP embedding of raw tile counts ``u`` [N, 8], scaled by the cell count."""
    u = np.atleast_2d(np.asarray(u))
    if u.shape[1] != NUM_TILES:
        raise ad.ShapeMismatch(f"feature vectors must have length {NUM_TILES}, got {u.shape}")
    x = Tensor((u / cells).astype(p.w1.dtype))
    hidden = ad.relu(ad.linear(x, p.w1, p.b1))
    return ad.linear(hidden, p.w2, p.b2)


class Network:
    """Named parameters plus batchnorm running statistics."""

    def __init__(self, config: ArchConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, RunningStats] = {}

    def _register(self, obj):
        tensors = obj.tensors() if hasattr(obj, "tensors") else [obj]
        for t in tensors:
            self.params[t.name] = t
        return obj

    def _bn(self, name: str, channels: int, dtype):
        self.params[f"{name}.gamma"] = _ones((channels,), dtype, f"{name}.gamma")
        self.params[f"{name}.beta"] = _zeros((channels,), dtype, f"{name}.beta")
        self.bn[name] = RunningStats.create(channels, dtype)

    def _bn_relu(self, x: Tensor, name: str, mode: str) -> Tensor:
        y = ad.batchnorm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"], self.bn[name], mode)
        return ad.relu(y)

    def parameters(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.{k}": t.data for k, t in self.params.items()}
        for k, s in self.bn.items():
            out[f"{prefix}.{k}.running_mean"] = s.mean
            out[f"{prefix}.{k}.running_var"] = s.var
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray], bn_initialized: dict[str, bool]):
        for k, t in self.params.items():
            arr = arrays[f"{prefix}.{k}"]
            if arr.shape != t.shape:
                raise ValueError(f"checkpoint shape {arr.shape} for {prefix}.{k}, expected {t.shape}")
            t.data = arr.astype(t.dtype).copy()
        for k, s in self.bn.items():
            s.mean = arrays[f"{prefix}.{k}.running_mean"].copy()
            s.var = arrays[f"{prefix}.{k}.running_var"].copy()
            s.initialized = bool(bn_initialized.get(f"{prefix}.{k}", False))

    def bn_flags(self, prefix: str) -> dict[str, bool]:
        return {f"{prefix}.{k}": s.initialized for k, s in self.bn.items()}


class Generator(Network):
    def __init__(self, config: ArchConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__(config)
        c, std = config.channels, config.init_std
        cells = config.height * config.width
        self._register(_normal(rng, (c * cells, config.latent_dim), std, dtype, "proj.w"))
        self._register(_zeros((c * cells,), dtype, "proj.b"))
        self._bn("bn0", c, dtype)
        for k in (1, 2):
            self._register(_normal(rng, (c, c), std, dtype, f"conv{k}.w"))
            self._bn(f"bn{k}", c, dtype)
        self.attention = None
        if config.attention:
            self.attention = self._register(SelfAttentionParams.init(c, config.qk_channels, rng, std, dtype))
        self.embedding = None
        head_in = c
        if config.conditioning:
            self.embedding = self._register(
                EmbeddingParams.init(config.embed_hidden, config.embed_dim, rng, std, dtype)
            )
            head_in += config.embed_dim
        self._register(_normal(rng, (NUM_TILES, head_in), std, dtype, "out.w"))
        self._register(_zeros((NUM_TILES,), dtype, "out.b"))

    def forward(self, z, u, mode: str = "train") -> Tensor:
        """Latent batch z [N, latent_dim] and counts u [N, 8] -> logits [N, 8, H, W]."""
        cfg, p = self.config, self.params
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=p["proj.w"].dtype))
        if z.data.ndim == 1:
            z = ad.reshape(z, (1, -1))
        if z.shape[1] != cfg.latent_dim:
            raise ad.ShapeMismatch(f"latent vectors must have length {cfg.latent_dim}, got {z.shape}")
        n = z.shape[0]
        h = ad.linear(z, p["proj.w"], p["proj.b"])
        h = ad.reshape(h, (n, cfg.channels, cfg.height, cfg.width))
        h = self._bn_relu(h, "bn0", mode)
        for k in (1, 2):
            h = self._bn_relu(ad.conv1x1(h, p[f"conv{k}.w"]), f"bn{k}", mode)
        if self.attention is not None:
            h, _ = self_attention(h, self.attention)
        if self.embedding is not None:
            e = embed_features(u, self.embedding, cfg.height * cfg.width)
            if e.shape[0] != n:
                raise ad.ShapeMismatch(f"{e.shape[0]} feature vectors for {n} latent vectors")
            h = ad.concat_channels(h, ad.broadcast_spatial(e, cfg.height, cfg.width))
        return ad.conv1x1(h, p["out.w"], p["out.b"])

    __call__ = forward


class Discriminator(Network):
    def __init__(self, config: ArchConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__(config)
        c, std = config.channels, config.init_std
        self._register(_normal(rng, (c, NUM_TILES), std, dtype, "conv1.w"))
        if config.positional_bias:
            self._register(_zeros((c, config.height, config.width), dtype, "pos.bias"))
        self._bn("bn1", c, dtype)
        self._register(_normal(rng, (c, c), std, dtype, "conv2.w"))
        self._bn("bn2", c, dtype)
        self.attention = None
        if config.attention:
            self.attention = self._register(SelfAttentionParams.init(c, config.qk_channels, rng, std, dtype))
        self.embedding = None
        mid_in = c
        if config.conditioning:
            self.embedding = self._register(
                EmbeddingParams.init(config.embed_hidden, config.embed_dim, rng, std, dtype)
            )
            mid_in += config.embed_dim
        self._register(_normal(rng, (c, mid_in), std, dtype, "conv3.w"))
        self._bn("bn3", c, dtype)
        self._register(_normal(rng, (1, c), std, dtype, "head.w"))
        self._register(_zeros((1,), dtype, "head.b"))

    def forward(self, x, u, mode: str = "train") -> Tensor:
        """Levels x [N, 8, H, W] (one-hot or relaxed) and counts u [N, 8] -> raw scores [N]."""
        cfg, p = self.config, self.params
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=p["conv1.w"].dtype))
        if x.data.ndim == 3:
            x = ad.reshape(x, (1,) + x.shape)
        if x.shape[1:] != (NUM_TILES, cfg.height, cfg.width):
            raise ad.ShapeMismatch(f"expected levels [N, 8, {cfg.height}, {cfg.width}], got {x.shape}")
        n = x.shape[0]
        h = ad.conv1x1(x, p["conv1.w"])
        if cfg.positional_bias:
            h = ad.add_batch_broadcast(h, p["pos.bias"])
        h = self._bn_relu(h, "bn1", mode)
        h = self._bn_relu(ad.conv1x1(h, p["conv2.w"]), "bn2", mode)
        if self.attention is not None:
            h, _ = self_attention(h, self.attention)
        if self.embedding is not None:
            e = embed_features(u, self.embedding, cfg.height * cfg.width)
            if e.shape[0] != n:
                raise ad.ShapeMismatch(f"{e.shape[0]} feature vectors for {n} levels")
            h = ad.concat_channels(h, ad.broadcast_spatial(e, cfg.height, cfg.width))
        h = self._bn_relu(ad.conv1x1(h, p["conv3.w"]), "bn3", mode)
        score = ad.linear(ad.global_avg_pool(h), p["head.w"], p["head.b"])
        return ad.reshape(score, (n,))

    __call__ = forward


@dataclass
class NetworkParams:
    """Both networks plus the pool of feature vectors used to condition sampling."""

    config: ArchConfig
    generator: Generator
    discriminator: Discriminator
    conditioning_pool: np.ndarray = field(default_factory=lambda: np.zeros((0, NUM_TILES), dtype=np.int64))

    @classmethod
    def init(cls, config: ArchConfig, seed: int | np.random.Generator = 0, dtype=np.float32) -> "NetworkParams":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        g = Generator(config, rng, dtype)
        d = Discriminator(config, rng, dtype)
        return cls(config, g, d)

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        arrays.update(self.generator.state_arrays("G"))
        arrays.update(self.discriminator.state_arrays("D"))
        arrays["conditioning_pool"] = np.asarray(self.conditioning_pool, dtype=np.float32).reshape(-1, NUM_TILES)
        return arrays

    def meta(self) -> dict:
        return {
            "arch": self.config.to_dict(),
            "bn_initialized": {**self.generator.bn_flags("G"), **self.discriminator.bn_flags("D")},
        }

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = self.meta()
        if extra_meta:
            meta["extra"] = extra_meta
        ad.save_arrays(path, self.to_arrays(), meta)

    @classmethod
    def load(cls, path, expect: ArchConfig | None = None) -> "NetworkParams":
        meta, arrays = ad.load_arrays(path)
        config = ArchConfig.from_dict(meta["arch"])
        if expect is not None and expect != config:
            raise ValueError(f"checkpoint architecture {config} differs from requested {expect}")
        params = cls.init(config, 0)
        flags = meta.get("bn_initialized", {})
        params.generator.load_state_arrays("G", arrays, flags)
        params.discriminator.load_state_arrays("D", arrays, flags)
        params.conditioning_pool = arrays["conditioning_pool"].astype(np.int64)
        return params
