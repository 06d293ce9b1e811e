import numpy as np
import pytest

from cesagan import autodiff as ad
from cesagan.autodiff import Tensor
from cesagan.level import decode_onehot, extract_features, stack_onehot
from cesagan.nets import (
    ArchConfig,
    EmbeddingParams,
    NetworkParams,
    SelfAttentionParams,
    embed_features,
    self_attention,
)
from netcheck import SMALL, loss_gradient_mismatches
from oracles import gradient_mismatches, sample_indices


def attention_params(c, rng, merge=0.0, std=0.3, dtype=np.float64):
    p = SelfAttentionParams.init(c, max(1, c // 8), rng, std, dtype)
    p.merge_weight.data = np.array(merge, dtype=dtype)
    return p


def test_qk_channels_floor():
    assert ArchConfig(channels=32).qk_channels == 4
    assert ArchConfig(channels=5).qk_channels == 1


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(0)
    p = attention_params(16, rng, merge=0.5)
    x = Tensor(rng.normal(size=(3, 16, 4, 6)))
    _, beta = self_attention(x, p)
    assert beta.shape == (3, 24, 24)
    np.testing.assert_allclose(beta.data.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_matches_direct_formula():
    rng = np.random.default_rng(1)
    c = 16
    p = attention_params(c, rng, merge=0.8)
    x = rng.normal(size=(1, c, 3, 4))
    out, beta = self_attention(Tensor(x), p)
    flat = x[0].reshape(c, -1)
    f, g, h = p.w_f.data @ flat, p.w_g.data @ flat, p.w_h.data @ flat
    s = f.T @ g  # s[i, j] = f(x_i) . g(x_j)
    expected_beta = np.exp(s) / np.exp(s).sum(axis=0, keepdims=True)  # normalize over i
    np.testing.assert_allclose(beta.data[0], expected_beta.T, rtol=1e-10)
    o = p.w_v.data @ np.stack([(expected_beta[:, j] * h).sum(axis=1) for j in range(s.shape[1])], axis=1)
    np.testing.assert_allclose(out.data[0], x[0] + 0.8 * o.reshape(c, 3, 4), rtol=1e-10)


def test_attention_zero_merge_is_identity():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(2, 8, 3, 5)).astype(np.float32))
    out, _ = self_attention(x, attention_params(8, rng, dtype=np.float32))
    assert out.data.tobytes() == x.data.tobytes()


def test_attention_single_position():
    rng = np.random.default_rng(3)
    p = attention_params(8, rng, merge=0.6)
    x = rng.normal(size=(1, 8, 1, 1))
    out, beta = self_attention(Tensor(x), p)
    assert beta.data.tolist() == [[[1.0]]]
    expected = x[0, :, 0, 0] + 0.6 * p.w_v.data @ (p.w_h.data @ x[0, :, 0, 0])
    np.testing.assert_allclose(out.data[0, :, 0, 0], expected, rtol=1e-12)


def test_attention_gradient():
    rng = np.random.default_rng(4)
    p = attention_params(8, rng, merge=0.7)
    x = Tensor(rng.normal(size=(2, 8, 3, 3)), requires_grad=True)
    wt = rng.normal(size=(2, 8, 3, 3))

    def build():
        return ad.sum_all(ad.mul(self_attention(x, p)[0], Tensor(wt)))

    with ad.tape():
        ad.backward(build())
    bad = []
    for t in [x] + p.tensors():
        bad += gradient_mismatches(lambda: float(build().data), t.data, t.grad, sample_indices(t.shape, 40, rng))
    assert bad == []


def test_embedding_zero_weights():
    rng = np.random.default_rng(5)
    p = EmbeddingParams.init(16, 8, rng, 0.0)
    e = embed_features(np.array([[100, 10, 1, 1, 2, 1, 0, 1]]), p, 117)
    assert e.shape == (1, 8) and not e.data.any()


def test_embedding_deterministic_and_gradient():
    rng = np.random.default_rng(6)
    p = EmbeddingParams.init(16, 8, rng, 0.5, np.float64)
    for t in p.tensors():
        t.data = t.data + rng.normal(0, 0.2, size=t.shape)
    u = np.array([[60, 50, 1, 1, 2, 1, 1, 1], [60, 50, 1, 1, 2, 1, 1, 1]])
    e = embed_features(u, p, 117)
    assert np.array_equal(e.data[0], e.data[1])
    wt = rng.normal(size=(2, 8))

    def build():
        return ad.sum_all(ad.mul(embed_features(u, p, 117), Tensor(wt)))

    with ad.tape():
        ad.backward(build())
    bad = []
    for t in p.tensors():
        bad += gradient_mismatches(lambda: float(build().data), t.data, t.grad, sample_indices(t.shape, 200, rng))
    assert bad == []


@pytest.mark.parametrize("n", [1, 3])
def test_shape_contracts(n, fixtures):
    params = NetworkParams.init(ArchConfig(), 0)
    rng = np.random.default_rng(0)
    u = np.stack([extract_features(fixtures[i % 5]) for i in range(n)])
    logits = params.generator.forward(rng.uniform(-1, 1, (n, 32)), u, "train")
    assert logits.shape == (n, 8, 9, 13)
    scores = params.discriminator.forward(stack_onehot(fixtures[:1] * n), u, "train")
    assert scores.shape == (n,)


def test_generator_is_deterministic(fixtures):
    z = np.random.default_rng(1).uniform(-1, 1, (4, 32)).astype(np.float32)
    u = np.stack([extract_features(g) for g in fixtures[:4]])
    a = NetworkParams.init(ArchConfig(), 42).generator.forward(z, u, "train").data
    b = NetworkParams.init(ArchConfig(), 42).generator.forward(z, u, "train").data
    assert a.tobytes() == b.tobytes()


def test_zero_head_scores_zero(fixtures):
    params = NetworkParams.init(ArchConfig(), 3)
    d = params.discriminator
    d.params["head.w"].data[:] = 0
    x = stack_onehot(fixtures)
    u = np.stack([extract_features(g) for g in fixtures])
    assert not d.forward(x, u, "train").data.any()


def test_discriminator_per_sample_independence_in_eval(fixtures):
    params = NetworkParams.init(ArchConfig(), 4)
    d = params.discriminator
    x = stack_onehot(fixtures)
    u = np.stack([extract_features(g) for g in fixtures])
    d.forward(x, u, "train")  # populate running statistics
    s = d.forward(x, u, "eval").data
    perm = [1, 0, 2, 3, 4]
    s_perm = d.forward(x[perm], u[perm], "eval").data
    np.testing.assert_array_equal(s_perm, s[perm])


def test_discriminator_input_gradient(fixtures):
    params = NetworkParams.init(SMALL, 5, dtype=np.float64)
    d = params.discriminator
    rng = np.random.default_rng(5)
    x = Tensor(rng.random((2, 8, 4, 5)), requires_grad=True)
    u = rng.integers(0, 5, size=(2, 8))
    d.forward(x.data, u, "train")

    def build():
        return ad.sum_all(d.forward(x, u, "eval"))

    with ad.tape():
        ad.backward(build())
    assert gradient_mismatches(lambda: float(build().data), x.data, x.grad, sample_indices(x.shape, 100, rng)) == []


def test_ablation_has_no_attention_or_embedding():
    params = NetworkParams.init(ArchConfig(attention=False, conditioning=False), 0)
    names = set(params.generator.params) | set(params.discriminator.params)
    assert not any(n.startswith(("attn.", "embed.")) for n in names)
    z = np.zeros((2, 32), dtype=np.float32)
    assert params.generator.forward(z, None, "train").shape == (2, 8, 9, 13)


@pytest.mark.parametrize("which", ["d", "g"])
def test_small_network_loss_gradients(which):
    bad, checked, kinks = loss_gradient_mismatches(SMALL, which)
    assert checked > 600
    assert kinks <= 0.02 * (checked + kinks)
    assert bad == []


def test_checkpoint_round_trip(tmp_path, fixtures):
    params = NetworkParams.init(ArchConfig(), 7)
    u = np.stack([extract_features(g) for g in fixtures])
    params.generator.forward(np.ones((5, 32), np.float32), u, "train")
    params.conditioning_pool = u
    params.save(tmp_path / "p.ckpt")
    back = NetworkParams.load(tmp_path / "p.ckpt")
    a, b = params.to_arrays(), back.to_arrays()
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].tobytes() == b[k].tobytes(), k
    z = np.random.default_rng(0).uniform(-1, 1, (5, 32)).astype(np.float32)
    assert (
        params.generator.forward(z, u, "eval").data.tobytes() == back.generator.forward(z, u, "eval").data.tobytes()
    )
    with pytest.raises(ValueError):
        NetworkParams.load(tmp_path / "p.ckpt", expect=ArchConfig(channels=16))


def test_smoke_train_outputs(smoke_run, fixtures):
    params = smoke_run.params
    rng = np.random.default_rng(0)
    z = rng.uniform(-1, 1, (100, 32)).astype(np.float32)
    u = params.conditioning_pool[rng.integers(0, 5, 100)]
    levels = [decode_onehot(x) for x in params.generator.forward(z, u, "eval").data]
    assert len({g.key() for g in levels}) >= 1
    # conditioning sensitivity: same z, different u -> different logits
    u1 = np.broadcast_to(extract_features(fixtures[0]), (100, 8))
    u2 = np.broadcast_to(extract_features(fixtures[2]), (100, 8))
    a = params.generator.forward(z, u1, "eval").data
    b = params.generator.forward(z, u2, "eval").data
    assert not np.array_equal(a, b)
