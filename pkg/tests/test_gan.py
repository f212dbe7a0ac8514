import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stgan import gan as G
from stgan import ndtensor as nd
from stgan import synthetic
from stgan.ndtensor import Tensor


def _cfg(**kw):
    base = dict(data_dim=3, noise_dim=2, g_hidden=(5,), d_hidden=(6,), batch_size=4, seed=0)
    base.update(kw)
    return G.GanConfig(**base)


def _zero(params):
    for p in params:
        p.data[...] = 0.0


def _scores(*v):
    return Tensor(np.array(v, dtype=float))


# -- networks ------------------------------------------------------------------

def test_zero_networks():
    gan = G.GAN(_cfg())
    _zero(gan.G.parameters())
    _zero(gan.D.parameters())
    assert not gan.generate(5).any()
    assert not gan.D(np.ones((5, 3))).data.any()


def test_shapes_and_conditional_width():
    gan = G.GAN(_cfg(cond_dim=4))
    assert gan.G.net.weights[0].shape == (5, 2 + 4)
    cond = np.ones((7, 4))
    assert gan.generate(7, condition=cond).shape == (7, 3)
    with pytest.raises(ValueError):
        gan.generate(7)
    with pytest.raises(ValueError):
        G.GAN(_cfg()).generate(2, condition=np.ones((2, 1)))


def test_conditional_generator_depends_on_condition_only_through_it():
    gan = G.GAN(_cfg(cond_dim=2))
    z = np.random.default_rng(0).standard_normal((3, 2))
    c1, c2 = np.zeros((3, 2)), np.ones((3, 2))
    with nd.no_grad():
        a, b, c = gan.G(z, c1).data, gan.G(z, c1).data, gan.G(z, c2).data
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_discriminator_rejects_bad_input():
    d = G.GAN(_cfg()).D
    with pytest.raises(ValueError):
        d(np.ones((2, 4)))
    with pytest.raises(ValueError):
        G.GAN(_cfg(minibatch_disc=True)).D(np.ones((1, 3)))


def test_discriminator_is_per_sample_without_minibatch_features():
    d = G.GAN(_cfg()).D
    x = np.random.default_rng(1).standard_normal((6, 3))
    perm = np.random.default_rng(2).permutation(6)
    np.testing.assert_allclose(d(x[perm]).data, d(x).data[perm], rtol=1e-13)


def test_conv_discriminator_runs():
    gan = G.GAN(_cfg(data_dim=16, d_arch="conv"))
    assert gan.D(np.ones((3, 16))).shape == (3,)
    with pytest.raises(ValueError):
        G.GAN(_cfg(data_dim=4, d_arch="conv"))


# -- minibatch features --------------------------------------------------------

def test_minibatch_feature_examples():
    same = Tensor(np.ones((2, 1, 3)))
    np.testing.assert_allclose(G.pairwise_similarity(same).data, 1.0)
    m = Tensor(np.array([[[0.0, 0.0]], [[0.5, 0.25]]]))
    np.testing.assert_allclose(G.pairwise_similarity(m).data, math.exp(-0.75))
    m = Tensor(np.array([[[0.0]], [[1.0]], [[-2.0]]]))
    assert G.pairwise_similarity(m).data[0, 0] == pytest.approx(math.exp(-1) + math.exp(-2), abs=1e-15)
    assert G.pairwise_similarity(m).data[0, 0] == pytest.approx(0.5032, abs=5e-5)
    with pytest.raises(ValueError):
        G.minibatch_features(Tensor(np.ones((1, 4))), Tensor(np.ones((4, 6))), 3, 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000))
def test_minibatch_features_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n, 4))
    T = Tensor(rng.standard_normal((4, 6)))
    perm = rng.permutation(n)
    a = G.minibatch_features(Tensor(f), T, 3, 2).data
    b = G.minibatch_features(Tensor(f[perm]), T, 3, 2).data
    np.testing.assert_allclose(b, a[perm], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_fused_kernel_matches_composed_ops(seed):
    rng = np.random.default_rng(seed)
    m = Tensor(rng.standard_normal((5, 3, 2)), requires_grad=True)
    w = rng.standard_normal((5, 3))
    np.testing.assert_allclose(G.pairwise_similarity(m).data, G.pairwise_similarity_composed(m).data,
                               rtol=1e-12)
    (g1,) = nd.grad(nd.tsum(G.pairwise_similarity(m) * w), [m])
    (g2,) = nd.grad(nd.tsum(G.pairwise_similarity_composed(m) * w), [m])
    np.testing.assert_allclose(g1.data, g2.data, rtol=1e-10, atol=1e-12)


def test_mbd_permutation_in_full_discriminator():
    d = G.GAN(_cfg(minibatch_disc=True, mbd_kernels=3, mbd_kernel_dim=2)).D
    x = np.random.default_rng(3).standard_normal((5, 3))
    perm = np.array([4, 2, 0, 1, 3])
    np.testing.assert_allclose(d(x[perm]).data, d(x).data[perm], rtol=1e-12)


# -- losses --------------------------------------------------------------------

def test_vanilla_examples():
    d, g = G.loss_vanilla(_scores(0, 0), _scores(0, 0))
    assert d.item() == pytest.approx(2 * math.log(2), abs=1e-15)
    assert g.item() == pytest.approx(math.log(2), abs=1e-15)
    d, _ = G.loss_vanilla(_scores(40.0), _scores(-40.0))
    assert d.item() < 1e-15
    # g_loss decreases when the fake score rises
    s = Tensor([0.3], requires_grad=True)
    (grad,) = nd.grad(G.loss_vanilla(_scores(0.0), s)[1], [s])
    assert grad.data[0] < 0


def test_lsgan_examples():
    assert G.loss_lsgan(_scores(1, 1), _scores(0, 0))[0].item() == 0.0
    assert G.loss_lsgan(_scores(0), _scores(1))[1].item() == 0.0
    assert G.loss_lsgan(_scores(0), _scores(0))[0].item() == 0.5


def test_wgan_examples():
    assert G.loss_wgan(_scores(1, 3), _scores(0, 0))[0].item() == -2.0
    assert G.loss_wgan(_scores(2, 5), _scores(2, 5))[0].item() == 0.0
    assert G.loss_wgan(_scores(1), _scores(4))[1].item() == -4.0


def test_weight_clipping():
    cfg = _cfg(fmeasure="wgan", lr=0.1)
    gan, _ = G.gan_train(np.random.default_rng(0).standard_normal((16, 3)) * 5, cfg, rounds=5)
    for w in gan.D.parameters():
        assert np.abs(w.data).max() <= 0.01


# -- gradient penalty ----------------------------------------------------------

def _linear_critic(scale):
    return lambda x: nd.tsum(x, axis=1) * scale


@pytest.mark.parametrize("scale, expected", [(1.0, 0.0), (2.0, 10.0), (0.0, 10.0)])
def test_penalty_examples(scale, expected):
    rng = np.random.default_rng(0)
    real, fake = rng.standard_normal((8, 1)), rng.standard_normal((8, 1))
    gp, norm = G.gradient_penalty(_linear_critic(scale), real, fake, 10.0, rng)
    assert gp.item() == pytest.approx(expected, abs=1e-12)
    assert norm == pytest.approx(abs(scale), abs=1e-12)


def test_penalty_rejects_mismatched_batches():
    with pytest.raises(ValueError):
        G.gradient_penalty(_linear_critic(1.0), np.ones((3, 2)), np.ones((4, 2)), 10.0,
                           np.random.default_rng(0))


def test_penalty_norms_work_inside_no_grad():
    with nd.no_grad():
        norms = G.interpolate_grad_norms(_linear_critic(3.0), np.ones((4, 1)))
    np.testing.assert_allclose(norms.data, 3.0)


# -- training loop -------------------------------------------------------------

@settings(max_examples=10, deadline=None)
@given(st.integers(0, 12), st.sampled_from(G.FMEASURES))
def test_schedule_two_generator_updates_per_discriminator_update(rounds, fmeasure):
    real = np.random.default_rng(0).standard_normal((16, 3))
    gan, res = G.gan_train(real, _cfg(fmeasure=fmeasure), rounds=rounds)
    assert res.d_steps == rounds and res.g_steps == 2 * rounds
    assert len(res.history) == rounds


def test_zero_rounds_leave_parameters_unchanged():
    cfg = _cfg()
    fresh = G.GAN(cfg)
    gan, res = G.gan_train(np.ones((16, 3)), cfg, rounds=0)
    for name, p in gan.named_parameters().items():
        assert np.array_equal(p.data, fresh.named_parameters()[name].data)


def test_training_needs_two_batches_of_data():
    with pytest.raises(ValueError):
        G.gan_train(np.ones((7, 3)), _cfg(), rounds=1)


def test_conditional_training_and_history():
    rng = np.random.default_rng(0)
    cfg = _cfg(cond_dim=2, fmeasure="wgan-gp")
    gan, res = G.gan_train(rng.standard_normal((16, 3)), cfg, conditions=rng.standard_normal((16, 2)),
                           rounds=3)
    assert all(math.isfinite(h.grad_norm) for h in res.history)
    with pytest.raises(ValueError):
        G.gan_train(rng.standard_normal((16, 3)), cfg, rounds=1)


def test_training_is_deterministic_and_snapshots():
    real = np.random.default_rng(0).standard_normal((16, 3))
    _, a = G.gan_train(real, _cfg(minibatch_disc=True, mbd_kernels=2, mbd_kernel_dim=2), rounds=6,
                       snapshot_every=3, snapshot_size=5)
    _, b = G.gan_train(real, _cfg(minibatch_disc=True, mbd_kernels=2, mbd_kernel_dim=2), rounds=6,
                       snapshot_every=3, snapshot_size=5)
    assert a.history == b.history
    assert [r for r, _ in a.snapshots] == [3, 6] and a.snapshots[0][1].shape == (5, 3)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        _cfg(fmeasure="hinge")
    cfg = _cfg(fmeasure="lsgan", g_hidden=[7, 7])
    assert G.GanConfig.from_dict(cfg.to_dict()) == cfg


# -- coverage and sampling -----------------------------------------------------

def test_mode_coverage_examples():
    centers = synthetic.ring_centers(8, 2.0)
    assert G.mode_coverage(centers, centers, 0.1) == 8
    assert G.mode_coverage(np.repeat(centers[:1], 10, axis=0), centers, 0.1) == 1
    near = centers[[0, 3, 5]] + 0.3
    assert G.mode_coverage(near, centers, 0.5) == 3
    with pytest.raises(ValueError):
        G.mode_coverage(near, centers, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 3.0))
def test_mode_coverage_matches_scan(seed, radius):
    rng = np.random.default_rng(seed)
    pts, centers = rng.uniform(-3, 3, size=(20, 2)), rng.uniform(-3, 3, size=(8, 2))
    covered = sum(any(np.linalg.norm(p - c) <= radius for p in pts) for c in centers)
    assert G.mode_coverage(pts, centers, radius) == covered


def test_sample_and_decode():
    gan = G.GAN(_cfg())

    def decode(vectors, seed):
        return [f"{v[0]:.6f}" for v in vectors]

    assert G.sample_and_decode(gan, 0, decode) == []
    assert G.sample_and_decode(gan, 4, decode, seed=2) == G.sample_and_decode(gan, 4, decode, seed=2)
