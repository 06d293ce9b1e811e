"""Conditional hinge losses, RMSprop, and the alternating GAN training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bootstrap import BootstrapConfig, CorpusState, bootstrap_round
from .level import LevelGrid, check_uniform, extract_features, stack_onehot
from .nets import ArchConfig, Network, NetworkParams

log = logging.getLogger(__name__)


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    total_iterations: int = 10_000
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 1e-8
    d_steps_per_g_step: int = 1
    seed: int = 0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be >= 1")


def discriminator_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """mean(max(0, 1 - real)) + mean(max(0, 1 + fake))."""
    if real_scores.shape != fake_scores.shape:
        raise ad.ShapeMismatch(f"real {real_scores.shape} and fake {fake_scores.shape} scores differ in shape")
    real_term = ad.mean_all(ad.relu(ad.affine(real_scores, -1.0, 1.0)))
    fake_term = ad.mean_all(ad.relu(ad.affine(fake_scores, 1.0, 1.0)))
    return ad.add(real_term, fake_term)


def generator_loss(fake_scores: Tensor) -> Tensor:
    return ad.affine(ad.mean_all(fake_scores), -1.0, 0.0)


@dataclass
class RMSprop:
    """acc <- decay*acc + (1-decay)*g^2;  p <- p - lr*g / (sqrt(acc) + eps)."""

    params: list[Tensor]
    lr: float = 1e-4
    decay: float = 0.99
    eps: float = 1e-8
    state: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.state:
            self.state = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, acc in zip(self.params, self.state):
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad
                if g.shape != p.shape:
                    raise ad.ShapeMismatch(f"gradient {g.shape} for parameter {p.shape}")
            rmsprop_update(p.data, g, acc, self.lr, self.decay, self.eps)


def rmsprop_update(param: np.ndarray, grad: np.ndarray, acc: np.ndarray, lr: float, decay: float, eps: float) -> None:
    """In-place update of ``param`` and ``acc``."""
    if param.shape != grad.shape or param.shape != acc.shape:
        raise ad.ShapeMismatch("parameter, gradient and accumulator shapes differ")
    acc *= decay
    acc += (1.0 - decay) * grad * grad
    param -= (lr * grad / (np.sqrt(acc) + eps)).astype(param.dtype)


def relax(logits: Tensor) -> Tensor:
    """Softmax over the tile channel so the discriminator can backpropagate into G."""
    return ad.softmax(logits, axis=1)


def _step(loss_fn: Callable[[], Tensor], net: Network, opt: RMSprop) -> float:
    net.zero_grad()
    with ad.tape():
        loss = loss_fn()
        ad.backward(loss)
    opt.step()
    return loss.item()


@dataclass
class TrainLog:
    """Newline-delimited JSON records; optionally mirrored to a file as they arrive."""

    records: list[dict] = field(default_factory=list)
    path: Optional[Path] = None

    def __post_init__(self):
        if self.path is not None:
            Path(self.path).write_text("")

    def append(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def iterations(self) -> list[dict]:
        return [r for r in self.records if r["type"] == "iteration"]

    def rounds(self) -> list[dict]:
        return [r for r in self.records if r["type"] == "bootstrap_round"]

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


@dataclass
class TrainResult:
    params: NetworkParams
    log: TrainLog
    corpus: CorpusState


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    init_ss, train_ss, boot_ss = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init_ss), np.random.default_rng(train_ss), np.random.default_rng(boot_ss)


def train(
    corpus: list[LevelGrid],
    config: TrainConfig = TrainConfig(),
    bootstrap: BootstrapConfig | None = None,
    arch: ArchConfig | None = None,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
) -> TrainResult:
    """Alternate discriminator and generator updates over the corpus.

    Real batches are sampled with replacement; fake samples reuse the real
    batch's feature vectors as conditioning.  Parameter init, batch sampling
    and bootstrap sampling draw from independent streams of ``config.seed``,
    so disabling bootstrapping leaves the training stream untouched.
    """
    if not corpus:
        raise EmptyCorpus("training corpus is empty")
    height, width = check_uniform(corpus)
    arch = arch or ArchConfig(height=height, width=width)
    if (arch.height, arch.width) != (height, width):
        raise ValueError(f"architecture expects {arch.height}x{arch.width} levels, corpus is {height}x{width}")

    init_rng, rng, boot_rng = _rngs(config.seed)
    params = NetworkParams.init(arch, init_rng)
    state = CorpusState.from_human(corpus)
    params.conditioning_pool = state.human_features()
    gen, disc = params.generator, params.discriminator
    dtype = gen.params["proj.w"].dtype
    opt_g = RMSprop(list(gen.parameters()), config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon)
    opt_d = RMSprop(list(disc.parameters()), config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon)
    trainlog = TrainLog(path=log_path)
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    onehots = stack_onehot(state.levels, dtype)
    feats = np.stack([extract_features(g) for g in state.levels])
    bs = config.batch_size
    round_index = 0

    for it in range(config.total_iterations):
        for _ in range(config.d_steps_per_g_step):
            idx = rng.integers(0, len(onehots), size=bs)
            real, u = onehots[idx], feats[idx]
            z = rng.uniform(-1.0, 1.0, size=(bs, arch.latent_dim)).astype(dtype)
            fake = relax(gen.forward(z, u, "train")).detach()
            scores = {}

            def d_loss():
                scores["real"] = disc.forward(real, u, "train")
                scores["fake"] = disc.forward(fake, u, "train")
                return discriminator_loss(scores["real"], scores["fake"])

            loss_d = _step(d_loss, disc, opt_d)

        z = rng.uniform(-1.0, 1.0, size=(bs, arch.latent_dim)).astype(dtype)

        def g_loss():
            return generator_loss(disc.forward(relax(gen.forward(z, u, "train")), u, "train"))

        loss_g = _step(g_loss, gen, opt_g)
        disc.zero_grad()

        trainlog.append(
            {
                "type": "iteration",
                "iteration": it + 1,
                "loss_d": loss_d,
                "loss_g": loss_g,
                "real_score": float(scores["real"].data.mean(dtype=np.float64)),
                "fake_score": float(scores["fake"].data.mean(dtype=np.float64)),
                "corpus_size": len(state),
            }
        )
        if not (np.isfinite(loss_d) and np.isfinite(loss_g)):
            raise FloatingPointError(f"non-finite loss at iteration {it + 1}")

        if bootstrap is not None and (it + 1) % bootstrap.cadence == 0:
            round_index += 1
            before = len(state)
            report = bootstrap_round(params, state, bootstrap, boot_rng, round_index)
            trainlog.append(report.as_record())
            if len(state) > before:
                new = state.levels[before:]
                onehots = np.concatenate([onehots, stack_onehot(new, dtype)])
                feats = np.concatenate([feats, np.stack([extract_features(g) for g in new])])
            log.debug("round %d: %d/%d admitted, corpus %d", round_index, report.survivors, report.candidates, len(state))

        if ckpt_dir is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            params.save(ckpt_dir / f"checkpoint_{it + 1:06d}.ckpt", {"iteration": it + 1})

    return TrainResult(params, trainlog, state)


def train_config_dict(config: TrainConfig) -> dict:
    return asdict(config)
