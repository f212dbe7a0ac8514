"""Adversarial training over fixed-length sentence vectors.

Four objectives are supported (``vanilla``, ``lsgan``, ``wgan``, ``wgan-gp``),
optionally with minibatch discrimination and conditioning.  Each round runs
``d_updates`` discriminator steps followed by ``g_updates`` generator steps
(1 and 2 by default).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import _accel
from . import ndtensor as nd
from .ndtensor import Tensor

log = logging.getLogger(__name__)

FMEASURES = ("vanilla", "lsgan", "wgan", "wgan-gp")


@dataclass
class GanConfig:
    data_dim: int = 128
    noise_dim: int = 32
    g_hidden: tuple[int, ...] = (128, 128)
    d_hidden: tuple[int, ...] = (128, 64)
    fmeasure: str = "wgan-gp"
    minibatch_disc: bool = False
    mbd_kernels: int = 16  # B
    mbd_kernel_dim: int = 8  # C
    gp_lambda: float = 10.0
    cond_dim: int = 0
    g_updates: int = 2
    d_updates: int = 1
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    clip_norm: float = 5.0
    weight_clip: float = 0.01
    slope: float = 0.2
    d_arch: str = "dense"
    rounds: int = 2000
    seed: int = 0

    def __post_init__(self):
        self.g_hidden = tuple(self.g_hidden)
        self.d_hidden = tuple(self.d_hidden)
        if self.fmeasure not in FMEASURES:
            raise ValueError(f"fmeasure must be one of {FMEASURES}, got {self.fmeasure!r}")
        if self.data_dim < 1 or self.noise_dim < 1:
            raise ValueError("data_dim and noise_dim must be positive")
        if self.d_arch not in ("dense", "conv"):
            raise ValueError("d_arch must be 'dense' or 'conv'")
        if self.g_updates < 1 or self.d_updates < 1:
            raise ValueError("update counts must be positive")

    @property
    def conditional(self) -> bool:
        return self.cond_dim > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["g_hidden"] = list(self.g_hidden)
        d["d_hidden"] = list(self.d_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        return replace(cls(), **d)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

@dataclass
class Dense:
    weights: list[Tensor]
    biases: list[Tensor]

    @classmethod
    def init(cls, rng: np.random.Generator, sizes: Sequence[int], prefix: str) -> "Dense":
        ws, bs = [], []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            ws.append(nd.dense_param(rng, (n_out, n_in), name=f"{prefix}.W{k}"))
            bs.append(nd.zeros_param((n_out,), name=f"{prefix}.b{k}"))
        return cls(ws, bs)

    def layer(self, k: int, x: Tensor) -> Tensor:
        return nd.linear(x, self.weights[k]) + self.biases[k]

    def params(self) -> list[Tensor]:
        return [t for pair in zip(self.weights, self.biases) for t in pair]


class Generator:
    """Dense stack, leaky-rectifier hidden units, linear output."""

    def __init__(self, config: GanConfig, rng: np.random.Generator):
        self.config = config
        sizes = [config.noise_dim + config.cond_dim, *config.g_hidden, config.data_dim]
        self.net = Dense.init(rng, sizes, "G")

    def parameters(self) -> list[Tensor]:
        return self.net.params()

    def __call__(self, noise, condition=None) -> Tensor:
        x = _with_condition(nd.as_tensor(noise), condition, self.config)
        n_layers = len(self.net.weights)
        for k in range(n_layers):
            x = self.net.layer(k, x)
            if k < n_layers - 1:
                x = nd.leaky_relu(x, self.config.slope)
        return x


def _with_condition(x: Tensor, condition, config: GanConfig) -> Tensor:
    if config.conditional:
        if condition is None:
            raise ValueError("conditional network called without a condition")
        condition = nd.as_tensor(condition)
        if condition.shape != (x.shape[0], config.cond_dim):
            raise ValueError(f"condition shape {condition.shape} != {(x.shape[0], config.cond_dim)}")
        return nd.concat([x, condition], axis=1)
    if condition is not None:
        raise ValueError("condition given to an unconditional network")
    return x


def pairwise_similarity_composed(m: Tensor) -> Tensor:
    """Reference form built from primitive ops: sum_{j != i} exp(-||m_ib - m_jb||_1)."""
    n, nb, nc = m.shape
    diff = nd.reshape(m, (n, 1, nb, nc)) - nd.reshape(m, (1, n, nb, nc))
    # the j == i term is exp(0) = 1
    return nd.tsum(nd.exp(-nd.l1_norm(diff, axis=3)), axis=1) - 1.0


def pairwise_similarity(m: Tensor) -> Tensor:
    """Fused kernel version of :func:`pairwise_similarity_composed`.

    First-order backward runs the kernel; when a differentiable gradient is
    requested (gradient penalty) the backward is assembled from tensor ops.
    """
    m = nd.as_tensor(m)
    n, nb, nc = m.shape

    def back(g, out):
        if not nd.grad_enabled():
            return (Tensor(_accel.pairwise_l1_similarity_grad(m.data, g.data)),)
        diff = nd.reshape(m, (n, 1, nb, nc)) - nd.reshape(m, (1, n, nb, nc))
        e = nd.exp(-nd.l1_norm(diff, axis=3))
        w = (nd.reshape(g, (n, 1, nb)) + nd.reshape(g, (1, n, nb))) * e
        sign = np.sign(diff.data)
        return (-nd.tsum(nd.reshape(w, (n, n, nb, 1)) * sign, axis=1),)

    return nd.make_op(_accel.pairwise_l1_similarity(m.data), (m,), back, "pairwise_similarity")


def minibatch_features(f: Tensor, T: Tensor, n_kernels: int, kernel_dim: int) -> Tensor:
    """For each sample i and kernel b: sum over j != i of exp(-||M_ib - M_jb||_1), M = f T."""
    f = nd.as_tensor(f)
    n = f.shape[0]
    if n < 2:
        raise ValueError("minibatch discrimination needs a batch of at least 2")
    m = nd.reshape(nd.matmul(f, T), (n, n_kernels, kernel_dim))
    return pairwise_similarity(m)


def conv1d(x: Tensor, w: Tensor, stride: int) -> Tensor:
    """Valid 1-D convolution of x (n, L, c_in) with w (c_out, k * c_in)."""
    n, length, c_in = x.shape
    k = w.shape[1] // c_in
    starts = np.arange(0, length - k + 1, stride)
    idx = starts[:, None] + np.arange(k)[None, :]
    patches = nd.reshape(x[:, idx, :], (n * len(starts), k * c_in))
    return nd.reshape(nd.linear(patches, w), (n, len(starts), w.shape[0]))


class Discriminator:
    """Raw-score critic; the objective applies its own link function.

    ``d_arch='conv'`` swaps the first hidden layer for two strided 1-D
    convolutions over the vector read as a length-``data_dim`` signal.
    """

    def __init__(self, config: GanConfig, rng: np.random.Generator):
        self.config = c = config
        self.convs: list[Tensor] = []
        n_in = c.data_dim + c.cond_dim
        if c.d_arch == "conv":
            self.convs = [nd.dense_param(rng, (8, 4), name="D.conv0"),
                          nd.dense_param(rng, (16, 4 * 8), name="D.conv1")]
            l1 = (c.data_dim - 4) // 2 + 1
            l2 = (l1 - 4) // 2 + 1
            if l2 < 1:
                raise ValueError("data_dim too small for the convolutional discriminator")
            n_in = 16 * l2 + c.cond_dim
        self.body = Dense.init(rng, [n_in, *c.d_hidden], "D")
        feat = c.d_hidden[-1] if c.d_hidden else n_in
        self.T: Tensor | None = None
        if c.minibatch_disc:
            self.T = Tensor(rng.normal(0.0, 0.1, size=(feat, c.mbd_kernels * c.mbd_kernel_dim)),
                            requires_grad=True, name="D.T")
            feat += c.mbd_kernels
        self.head = Dense.init(rng, [feat, 1], "D.head")

    def parameters(self) -> list[Tensor]:
        out = list(self.convs) + self.body.params() + self.head.params()
        if self.T is not None:
            out.append(self.T)
        return out

    def features(self, x, condition=None) -> Tensor:
        c = self.config
        x = nd.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != c.data_dim:
            raise ValueError(f"discriminator expects (n, {c.data_dim}) input, got {x.shape}")
        if self.convs:
            h = nd.reshape(x, (x.shape[0], c.data_dim, 1))
            for w in self.convs:
                h = nd.leaky_relu(conv1d(h, w, stride=2), c.slope)
            x = nd.reshape(h, (x.shape[0], h.shape[1] * h.shape[2]))
        h = _with_condition(x, condition, c)
        for k in range(len(self.body.weights)):
            h = nd.leaky_relu(self.body.layer(k, h), c.slope)
        return h

    def __call__(self, x, condition=None) -> Tensor:
        h = self.features(x, condition)
        if self.T is not None:
            h = nd.concat([h, minibatch_features(h, self.T, self.config.mbd_kernels,
                                                 self.config.mbd_kernel_dim)], axis=1)
        return nd.reshape(self.head.layer(0, h), (h.shape[0],))


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def loss_vanilla(s_real: Tensor, s_fake: Tensor) -> tuple[Tensor, Tensor]:
    """Cross-entropy discriminator loss and the non-saturating generator loss."""
    d = -nd.mean(nd.log_sigmoid(s_real)) - nd.mean(nd.log_sigmoid(-nd.as_tensor(s_fake)))
    g = -nd.mean(nd.log_sigmoid(s_fake))
    return d, g


def loss_lsgan(s_real: Tensor, s_fake: Tensor) -> tuple[Tensor, Tensor]:
    d = 0.5 * nd.mean((nd.as_tensor(s_real) - 1.0) ** 2) + 0.5 * nd.mean(nd.as_tensor(s_fake) ** 2)
    g = 0.5 * nd.mean((nd.as_tensor(s_fake) - 1.0) ** 2)
    return d, g


def loss_wgan(s_real: Tensor, s_fake: Tensor) -> tuple[Tensor, Tensor]:
    d = nd.mean(s_fake) - nd.mean(s_real)
    g = -nd.mean(s_fake)
    return d, g


LOSSES: dict[str, Callable[[Tensor, Tensor], tuple[Tensor, Tensor]]] = {
    "vanilla": loss_vanilla,
    "lsgan": loss_lsgan,
    "wgan": loss_wgan,
    "wgan-gp": loss_wgan,
}


def interpolate(x_real: np.ndarray, x_fake: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if x_real.shape != x_fake.shape:
        raise ValueError(f"real batch {x_real.shape} and fake batch {x_fake.shape} differ")
    eps = rng.uniform(0.0, 1.0, size=(len(x_real),) + (1,) * (x_real.ndim - 1))
    return eps * x_real + (1.0 - eps) * x_fake


def interpolate_grad_norms(critic: Callable, x_hat: np.ndarray, condition=None,
                           create_graph: bool = False) -> Tensor:
    """Per-sample ||dD/dx|| at ``x_hat``; differentiable when ``create_graph``."""
    # the norms need a graph even when the caller is inside no_grad
    with nd.enable_grad():
        xh = Tensor(x_hat, requires_grad=True)
        scores = critic(xh, condition) if condition is not None else critic(xh)
        (g,) = nd.grad(nd.tsum(scores), [xh], create_graph=create_graph)
        return nd.l2_norm(nd.reshape(g, (g.shape[0], -1)), axis=1)


def gradient_penalty(critic: Callable, x_real: np.ndarray, x_fake: np.ndarray, lam: float,
                     rng: np.random.Generator, condition=None) -> tuple[Tensor, float]:
    """``lam * mean((||dD/dx_hat|| - 1)^2)`` at random real/fake interpolates.

    Returns the penalty (differentiable w.r.t. the critic's parameters) and
    the mean gradient norm.
    """
    x_hat = interpolate(np.asarray(x_real, dtype=np.float64), np.asarray(x_fake, dtype=np.float64), rng)
    norms = interpolate_grad_norms(critic, x_hat, condition, create_graph=True)
    if not np.all(np.isfinite(norms.data)):
        raise FloatingPointError("non-finite critic gradient at interpolates")
    penalty = lam * nd.mean((norms - 1.0) ** 2)
    return penalty, float(norms.data.mean())


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class HistoryRow:
    round: int
    d_loss: float
    g_loss: float
    grad_norm: float = float("nan")


@dataclass
class GanResult:
    history: list[HistoryRow] = field(default_factory=list)
    d_steps: int = 0
    g_steps: int = 0
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)


class GAN:
    def __init__(self, config: GanConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.G = Generator(config, rng)
        self.D = Discriminator(config, rng)
        self.rng = np.random.default_rng(config.seed + 7919)
        self.opt_g = nd.Adam(self.G.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.opt_d = nd.Adam(self.D.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.d_steps = 0
        self.g_steps = 0

    def named_parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in self.G.parameters() + self.D.parameters()}

    def noise(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        return (rng or self.rng).standard_normal((n, self.config.noise_dim))

    def generate(self, n: int, rng: np.random.Generator | None = None, condition=None) -> np.ndarray:
        with nd.no_grad():
            return self.G(self.noise(n, rng), condition).data

    def _loss_fn(self):
        return LOSSES[self.config.fmeasure]

    def d_step(self, real: np.ndarray, cond_real=None, cond_fake=None) -> tuple[float, float]:
        c = self.config
        n = len(real)
        with nd.no_grad():
            fake = self.G(self.noise(n), cond_fake).data
        s_real = self.D(real, cond_real)
        s_fake = self.D(fake, cond_fake)
        d_loss, _ = self._loss_fn()(s_real, s_fake)
        grad_norm = float("nan")
        if c.fmeasure == "wgan-gp":
            # interpolate conditions alongside the vectors only when they match
            gp, grad_norm = gradient_penalty(self.D, real, fake, c.gp_lambda, self.rng, cond_real)
            d_loss = d_loss + gp
        value = d_loss.item()
        if not math.isfinite(value):
            raise FloatingPointError("non-finite discriminator loss")
        nd.backward(d_loss)
        nd.clip_global_norm(self.opt_d.params, c.clip_norm)
        self.opt_d.step()
        if c.fmeasure == "wgan":
            for w in self.D.parameters():
                np.clip(w.data, -c.weight_clip, c.weight_clip, out=w.data)
        self.d_steps += 1
        return value, grad_norm

    def g_step(self, n: int, cond=None) -> float:
        c = self.config
        d_params = self.D.parameters()
        for p in d_params:
            p.requires_grad = False
        try:
            s_fake = self.D(self.G(self.noise(n), cond), cond)
            _, g_loss = self._loss_fn()(s_fake, s_fake)
        finally:
            for p in d_params:
                p.requires_grad = True
        value = g_loss.item()
        if not math.isfinite(value):
            raise FloatingPointError("non-finite generator loss")
        nd.backward(g_loss)
        nd.clip_global_norm(self.opt_g.params, c.clip_norm)
        self.opt_g.step()
        self.g_steps += 1
        return value


def gan_train(real: np.ndarray, config: GanConfig, conditions: np.ndarray | None = None,
              rounds: int | None = None, gan: GAN | None = None, snapshot_every: int = 0,
              snapshot_size: int = 16) -> tuple[GAN, GanResult]:
    """Train on ``real`` (N, data_dim).  With ``conditions`` (N, cond_dim) the
    generator and critic both see the row's condition.
    """
    c = config
    real = np.asarray(real, dtype=np.float64)
    if len(real) < 2 * c.batch_size:
        raise ValueError(f"need at least {2 * c.batch_size} real vectors, got {len(real)}")
    if (conditions is None) == c.conditional:
        raise ValueError("conditions must be given exactly when cond_dim > 0")
    gan = gan or GAN(c)
    rounds = c.rounds if rounds is None else rounds
    result = GanResult()
    n = c.batch_size
    for r in range(1, rounds + 1):
        d_losses, norms = [], []
        for _ in range(c.d_updates):
            idx = gan.rng.integers(len(real), size=n)
            cond = conditions[idx] if conditions is not None else None
            d_loss, gn = gan.d_step(real[idx], cond, cond)
            d_losses.append(d_loss)
            norms.append(gn)
        g_losses = []
        for _ in range(c.g_updates):
            cond = conditions[gan.rng.integers(len(real), size=n)] if conditions is not None else None
            g_losses.append(gan.g_step(n, cond))
        result.history.append(HistoryRow(r, float(np.mean(d_losses)), float(np.mean(g_losses)),
                                         float(np.mean(norms))))
        if snapshot_every and r % snapshot_every == 0 and not c.conditional:
            result.snapshots.append((r, gan.generate(snapshot_size)))
    result.d_steps, result.g_steps = gan.d_steps, gan.g_steps
    return gan, result


def mean_interpolate_grad_norm(gan: GAN, real: np.ndarray, n: int = 256, seed: int = 0,
                               conditions: np.ndarray | None = None) -> float:
    """Mean critic gradient norm over ``n`` fresh real/fake interpolates."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(len(real), size=n)
    cond = conditions[idx] if conditions is not None else None
    fake = gan.generate(n, rng, cond)
    x_hat = interpolate(np.asarray(real)[idx], fake, rng)
    return float(interpolate_grad_norms(gan.D, x_hat, cond).data.mean())


def mode_coverage(samples, centers, radius: float) -> int:
    """How many centers have at least one sample within ``radius``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    d2 = _accel.min_sqdist(np.asarray(samples, dtype=np.float64), np.asarray(centers, dtype=np.float64))
    return int(np.sum(d2 <= radius * radius))


def sample_and_decode(gan: GAN, n: int, decode: Callable[[np.ndarray, int], list], seed: int = 0,
                      condition=None) -> list:
    """Draw ``n`` vectors from the generator and decode them to sentences.

    ``decode(vectors, seed)`` wraps greedy or sampled decoding.
    """
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    vectors = gan.generate(n, rng, condition)
    return decode(vectors, seed)
