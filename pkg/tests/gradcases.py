"""Seeded finite-difference cases shared by the unit and acceptance tests.

Every case builds ``(params, build_loss)`` from a seed; the loss is a
weighted sum of the op output so every output entry contributes.
"""

import numpy as np

from stgan import gan as G
from stgan import ndtensor as nd
from stgan.corpus import SentenceTriple, TokenizedSentence
from stgan.ndtensor import Tensor
from stgan.skipthought import GRUParams, SkipThought, SkipThoughtConfig, gru_cell, st_loss

TOL = 1e-4


def _param(rng, shape, kind="any"):
    x = rng.uniform(0.2, 1.0, size=shape)
    if kind != "positive":
        x = x * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(x, requires_grad=True)


def unary(fn, kind="any", shape=(3, 4)):
    def case(seed):
        rng = np.random.default_rng(seed)
        a = _param(rng, shape, kind)
        w = rng.standard_normal(fn(a).shape)
        return [a], lambda: nd.tsum(fn(a) * w)
    return case


def binary(fn, shape_a=(3, 4), shape_b=(3, 4), kind_b="any"):
    def case(seed):
        rng = np.random.default_rng(seed)
        a, b = _param(rng, shape_a), _param(rng, shape_b, kind_b)
        w = rng.standard_normal(fn(a, b).shape)
        return [a, b], lambda: nd.tsum(fn(a, b) * w)
    return case


def _matmul_case(shape_a, shape_b):
    def case(seed):
        rng = np.random.default_rng(seed)
        a, b = _param(rng, shape_a), _param(rng, shape_b)
        out = nd.matmul(a, b)
        w = rng.standard_normal(out.shape)
        return [a, b], lambda: nd.tsum(nd.matmul(a, b) * w)
    return case


def _embedding_case(seed):
    rng = np.random.default_rng(seed)
    table = _param(rng, (6, 3))
    ids = rng.integers(0, 6, size=(2, 5))
    w = rng.standard_normal((2, 5, 3))
    return [table], lambda: nd.tsum(nd.embedding(table, ids) * w)


def _getitem_case(seed):
    rng = np.random.default_rng(seed)
    a = _param(rng, (5, 4))
    rows = rng.integers(0, 5, size=6)
    cols = rng.integers(0, 4, size=6)
    w = rng.standard_normal(6)
    return [a], lambda: nd.tsum(a[rows, cols] * w) + nd.tsum(a[1:4, ::2] * 0.5)


def _scatter_case(seed):
    rng = np.random.default_rng(seed)
    g = _param(rng, (6,))
    idx = (rng.integers(0, 4, size=6),)
    w = rng.standard_normal(4)
    return [g], lambda: nd.tsum(nd.scatter(g, idx, (4,)) * w)


def _concat_case(seed):
    rng = np.random.default_rng(seed)
    a, b = _param(rng, (3, 2)), _param(rng, (3, 4))
    w = rng.standard_normal((3, 6))
    return [a, b], lambda: nd.tsum(nd.concat([a, b], axis=1) * w)


def _stack_case(seed):
    rng = np.random.default_rng(seed)
    a, b = _param(rng, (3, 2)), _param(rng, (3, 2))
    w = rng.standard_normal((3, 2, 2))
    return [a, b], lambda: nd.tsum(nd.stack([a, b], axis=1) * w)


def _pairwise_case(seed):
    rng = np.random.default_rng(seed)
    m = _param(rng, (4, 3, 2))
    w = rng.standard_normal((4, 3))
    return [m], lambda: nd.tsum(G.pairwise_similarity(m) * w)


OP_CASES = {
    "add": binary(nd.add),
    "add_broadcast": binary(nd.add, (3, 4), (4,)),
    "sub": binary(nd.sub, (3, 4), (3, 1)),
    "mul": binary(nd.mul),
    "mul_broadcast": binary(nd.mul, (2, 3, 4), (3, 1)),
    "div": binary(nd.div, kind_b="any"),
    "neg": unary(nd.neg),
    "power": unary(lambda a: nd.power(a, 2.5), "positive"),
    "exp": unary(nd.exp),
    "log": unary(nd.log, "positive"),
    "sqrt": unary(nd.sqrt, "positive"),
    "abs": unary(nd.abs_),
    "clamp_min": unary(lambda a: nd.clamp_min(a, 0.0)),
    "sigmoid": unary(nd.sigmoid),
    "log_sigmoid": unary(nd.log_sigmoid),
    "tanh": unary(nd.tanh),
    "leaky_relu": unary(nd.leaky_relu),
    "sum_axis": unary(lambda a: nd.tsum(a, axis=1, keepdims=True)),
    "mean": unary(lambda a: nd.mean(a, axis=0)),
    "reshape": unary(lambda a: nd.reshape(a, (2, 6))),
    "transpose": unary(lambda a: nd.transpose(a)),
    "broadcast_to": unary(lambda a: nd.broadcast_to(a, (2, 3, 4))),
    "softmax": unary(nd.softmax),
    "log_softmax": unary(nd.log_softmax),
    "l1_norm": unary(lambda a: nd.l1_norm(a, axis=1)),
    "l2_norm": unary(lambda a: nd.l2_norm(a, axis=1)),
    "matmul_2d": _matmul_case((3, 4), (4, 2)),
    "matmul_vec": _matmul_case((3, 4), (4,)),
    "linear": binary(nd.linear, (5, 4), (3, 4)),
    "embedding": _embedding_case,
    "getitem": _getitem_case,
    "scatter": _scatter_case,
    "concat": _concat_case,
    "stack": _stack_case,
    "pairwise_similarity": _pairwise_case,
}


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------

def _gru_cell_case(seed):
    rng = np.random.default_rng(seed)
    p = GRUParams.init(rng, 3, 4, d_cond=2, scale=0.5)
    x = _param(rng, (2, 3))
    h = Tensor(rng.uniform(-0.5, 0.5, size=(2, 4)), requires_grad=True)
    cond = _param(rng, (2, 2))
    w = rng.standard_normal((2, 4))
    params = [x, h, cond, *[t for t in vars(p).values()]]
    return params, lambda: nd.tsum(gru_cell(x, h, p, condition=cond) * w)


def _sent(rng, vocab, n):
    return TokenizedSentence((1, *rng.integers(4, vocab, size=n).tolist(), 2))


def _st_loss_case(seed):
    rng = np.random.default_rng(seed)
    vocab = 7
    model = SkipThought(vocab, SkipThoughtConfig(d_w=2, h_enc=2, h_dec=2, seed=seed))
    for t in model.parameters():
        t.data *= 4.0  # larger weights than the init so gradients are not tiny
    triple = SentenceTriple(_sent(rng, vocab, 2), _sent(rng, vocab, 2), _sent(rng, vocab, 2))
    return model.parameters(), lambda: st_loss(triple, model)


def _gan_case(fmeasure, mbd=False, which="d"):
    def case(seed):
        rng = np.random.default_rng(seed)
        cfg = G.GanConfig(data_dim=3, noise_dim=2, g_hidden=(4,), d_hidden=(5,), fmeasure=fmeasure,
                          minibatch_disc=mbd, mbd_kernels=2, mbd_kernel_dim=2, seed=seed)
        gan = G.GAN(cfg)
        real = rng.standard_normal((4, 3))
        z = rng.standard_normal((4, 2))
        loss_fn = G.LOSSES[fmeasure]

        if which == "g":
            def build():
                s = gan.D(gan.G(z))
                return loss_fn(s, s)[1]
            return gan.G.parameters(), build

        fake = rng.standard_normal((4, 3))

        def build():
            d_loss, _ = loss_fn(gan.D(real), gan.D(fake))
            if fmeasure == "wgan-gp":
                gp, _ = G.gradient_penalty(gan.D, real, fake, cfg.gp_lambda, np.random.default_rng(seed))
                d_loss = d_loss + gp
            return d_loss
        return gan.D.parameters(), build
    return case


COMPOSITE_CASES = {
    "gru_cell": _gru_cell_case,
    "st_loss": _st_loss_case,
    "gan_vanilla_d": _gan_case("vanilla"),
    "gan_vanilla_g": _gan_case("vanilla", which="g"),
    "gan_lsgan_d": _gan_case("lsgan"),
    "gan_lsgan_g": _gan_case("lsgan", which="g"),
    "gan_wgan_d": _gan_case("wgan"),
    "gan_wgan_g": _gan_case("wgan", which="g"),
    "gan_wgan_gp_d": _gan_case("wgan-gp"),
    "gan_wgan_gp_mbd_d": _gan_case("wgan-gp", mbd=True),
    "gan_vanilla_mbd_g": _gan_case("vanilla", mbd=True, which="g"),
}

ALL_CASES = {**OP_CASES, **COMPOSITE_CASES}


def worst_error(case, seeds=range(10)) -> float:
    worst = 0.0
    for seed in seeds:
        params, build = case(seed)
        report = nd.finite_difference_check(build, params)
        worst = max(worst, report.max_rel_error)
    return worst
