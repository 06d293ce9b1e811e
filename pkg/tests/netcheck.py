"""Finite-difference checks of the full GAN losses, shared by unit and acceptance tests."""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from cesagan import autodiff as ad
from cesagan.level import NUM_TILES
from cesagan.nets import ArchConfig, NetworkParams
from cesagan.training import discriminator_loss, generator_loss, relax
from oracles import gradient_mismatches, sample_indices



def param(rng, *shape, scale=1.0):
    return ad.Tensor(rng.normal(0, scale, size=shape).astype(np.float64), requires_grad=True)


def weighted_sum(out, w):
    return ad.sum_all(ad.mul(out, ad.Tensor(w)))


def grad_check(build, tensors, rel_tol=1e-4, k=60, seed=0):
    """Compare tape gradients of ``build()`` (a scalar Tensor) against central differences."""
    for t in tensors:
        t.grad = None
    with ad.tape():
        loss = build()
        ad.backward(loss)
    rng = np.random.default_rng(seed)

    def f():
        return float(build().data)

    bad = []
    for t in tensors:
        bad += gradient_mismatches(f, t.data, t.grad, sample_indices(t.shape, k, rng), rel_tol=rel_tol)
    return bad


SMALL = ArchConfig(height=4, width=5, latent_dim=4, channels=8, embed_hidden=6, embed_dim=3, init_std=0.5)


@contextmanager
def relu_masks():
    """Record the on/off pattern of every ReLU evaluated inside the block."""
    masks: list[bytes] = []
    real_relu = ad.relu

    def recording(x):
        masks.append(np.packbits(x.data > 0).tobytes())
        return real_relu(x)

    ad.relu = recording
    try:
        yield masks
    finally:
        ad.relu = real_relu


def _perturb(params: NetworkParams, rng) -> None:
    # move batchnorm affine params, biases and merge weights away from their init values
    for net in (params.generator, params.discriminator):
        for name, t in net.params.items():
            if name.endswith((".gamma", ".beta", "merge_weight", "pos.bias", ".b", ".b1", ".b2")):
                t.data = np.asarray(t.data + rng.normal(0, 0.3, size=t.shape))


def loss_gradient_mismatches(arch: ArchConfig = SMALL, which: str = "d", per_tensor: int = 10**9, seed: int = 0,
                             h: float = 1e-4, rel_tol: float = 1e-3, abs_floor: float = 1e-6):
    """Compare dL_D/d(D params) or dL_G/d(G params) on a 2-sample batch with central differences.

    An entry whose +-h probe flips any ReLU (including the hinge) straddles a
    non-differentiable point, where a central difference measures nothing
    useful; such entries are counted in ``kinks`` and not compared.

    Returns ``(mismatches, checked, kinks)``.
    """
    rng = np.random.default_rng(seed)
    params = NetworkParams.init(arch, seed, dtype=np.float64)
    _perturb(params, rng)
    g, d = params.generator, params.discriminator
    n = 2
    real = np.zeros((n, NUM_TILES, arch.height, arch.width))
    tiles = rng.integers(0, NUM_TILES, size=(n, arch.height, arch.width))
    for i in range(n):
        np.put_along_axis(real[i], tiles[i][None], 1.0, axis=0)
    u = np.stack([np.bincount(t.ravel(), minlength=NUM_TILES) for t in tiles])
    z = rng.uniform(-1, 1, size=(n, arch.latent_dim))

    if which == "d":
        fake = relax(g.forward(z, u, "train")).detach()

        def loss():
            return discriminator_loss(d.forward(real, u, "train"), d.forward(fake, u, "train"))

        net = d
    else:

        def loss():
            return generator_loss(d.forward(relax(g.forward(z, u, "train")), u, "train"))

        net = g

    net.zero_grad()
    with ad.tape():
        ad.backward(loss())

    def probe():
        with relu_masks() as masks:
            value = float(loss().data)
        return value, masks

    _, base = probe()
    bad, checked, kinks = [], 0, 0
    for name, t in net.params.items():
        for idx in sample_indices(t.shape, per_tensor, rng):
            old = t.data[idx]
            t.data[idx] = old + h
            up, m_up = probe()
            t.data[idx] = old - h
            down, m_down = probe()
            t.data[idx] = old
            if m_up != base or m_down != base:
                kinks += 1
                continue
            checked += 1
            num = (up - down) / (2 * h)
            ana = float(t.grad[idx])
            if abs(ana) > abs_floor:
                err = abs(ana - num) / max(abs(ana), abs(num))
                if err >= rel_tol:
                    bad.append((name, idx, ana, num, err))
            elif abs(num - ana) >= abs_floor:
                bad.append((name, idx, ana, num, abs(num - ana)))
    return bad, checked, kinks
