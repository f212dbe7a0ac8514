"""Skip-thought encoder/decoder built from bias-free GRU cells.

Encoder step (no additive biases)::

    r = sigmoid(W_r x + U_r h)
    z = sigmoid(W_z x + U_z h)
    h~ = tanh(W x + U (r * h))
    h' = (1 - z) * h + z * h~

Decoders add ``C_r c``, ``C_z c`` and ``C c`` for a conditioning sentence
vector ``c`` and are fed the embedding of the previous word.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ndtensor as nd
from .corpus import BOS, EOS, PAD, SentenceTriple, TokenizedSentence, batch_same_length
from .ndtensor import Tensor

log = logging.getLogger(__name__)

DEBUG_GATES = os.environ.get("STGAN_LOG", "").lower() == "debug"

MODES = ("uni", "bi", "combine-skip")


@dataclass
class SkipThoughtConfig:
    d_w: int = 64
    h_enc: int = 64
    h_dec: int = 96
    mode: str = "combine-skip"
    max_decode_len: int = 30
    beam_width: int = 5
    temperature: float = 1.0
    epochs: int = 20
    lr: float = 0.01
    batch_size: int = 16
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "uni" and self.h_enc % 2:
            raise ValueError("bi-skip needs an even h_enc")

    @property
    def dim(self) -> int:
        return 2 * self.h_enc if self.mode == "combine-skip" else self.h_enc


# full-size settings; constructible but far too slow for this engine
PAPER_SCALE = SkipThoughtConfig(d_w=620, h_enc=2400, h_dec=1600)


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

@dataclass
class GRUParams:
    W_r: Tensor
    U_r: Tensor
    W_z: Tensor
    U_z: Tensor
    W: Tensor
    U: Tensor
    C_r: Tensor | None = None
    C_z: Tensor | None = None
    C: Tensor | None = None

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, hidden: int, d_cond: int | None = None,
             scale: float = 0.08) -> "GRUParams":
        def u(shape):
            return nd.uniform_param(rng, shape, scale)

        cond = (u((hidden, d_cond)), u((hidden, d_cond)), u((hidden, d_cond))) if d_cond else (None,) * 3
        return cls(u((hidden, d_in)), u((hidden, hidden)), u((hidden, d_in)), u((hidden, hidden)),
                   u((hidden, d_in)), u((hidden, hidden)), *cond)

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{k}": v for k, v in vars(self).items() if v is not None}

    def condition_terms(self, cond: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if self.C is None:
            raise ValueError("unconditioned GRU given a condition vector")
        if cond.shape[-1] != self.C.shape[1]:
            raise ValueError(f"condition width {cond.shape[-1]} does not match C {self.C.shape}")
        return nd.linear(cond, self.C_r), nd.linear(cond, self.C_z), nd.linear(cond, self.C)


def _check_gates(*gates: Tensor) -> None:
    for g in gates:
        if not np.all((g.data > 0) & (g.data < 1)):
            raise FloatingPointError("GRU gate left the open interval (0, 1)")


def gru_cell(x: Tensor, h_prev: Tensor, p: GRUParams, condition: Tensor | None = None,
             cond_terms: tuple[Tensor, Tensor, Tensor] | None = None, check: bool | None = None) -> Tensor:
    """One GRU step; pass ``condition`` (or precomputed ``cond_terms``) for the decoder form."""
    x, h_prev = nd.as_tensor(x), nd.as_tensor(h_prev)
    if x.shape[-1] != p.W.shape[1] or h_prev.shape[-1] != p.hidden:
        raise ValueError(f"gru_cell: x {x.shape} / h {h_prev.shape} do not fit W {p.W.shape}, U {p.U.shape}")
    if condition is not None and cond_terms is None:
        cond_terms = p.condition_terms(nd.as_tensor(condition))
    r_in = nd.linear(x, p.W_r) + nd.linear(h_prev, p.U_r)
    z_in = nd.linear(x, p.W_z) + nd.linear(h_prev, p.U_z)
    if cond_terms is not None:
        r_in = r_in + cond_terms[0]
        z_in = z_in + cond_terms[1]
    r = nd.sigmoid(r_in)
    z = nd.sigmoid(z_in)
    cand = nd.linear(x, p.W) + nd.linear(r * h_prev, p.U)
    if cond_terms is not None:
        cand = cand + cond_terms[2]
    h_tilde = nd.tanh(cand)
    if DEBUG_GATES if check is None else check:
        _check_gates(r, z)
    return (1.0 - z) * h_prev + z * h_tilde


def run_gru(xs: Sequence[Tensor], p: GRUParams, h0: Tensor | None = None,
            cond_terms=None) -> list[Tensor]:
    batch = xs[0].shape[0]
    h = h0 if h0 is not None else Tensor(np.zeros((batch, p.hidden)))
    states = []
    for x in xs:
        h = gru_cell(x, h, p, cond_terms=cond_terms)
        states.append(h)
    return states


# ---------------------------------------------------------------------------
# encoders and decoders
# ---------------------------------------------------------------------------

@dataclass
class EncoderParams:
    """Word embeddings plus one GRU (uni-skip) or a forward/backward pair (bi-skip)."""

    emb: Tensor
    fwd: GRUParams
    bwd: GRUParams | None = None

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.emb": self.emb}
        out.update(self.fwd.named(f"{prefix}.fwd"))
        if self.bwd is not None:
            out.update(self.bwd.named(f"{prefix}.bwd"))
        return out

    def encode(self, ids: np.ndarray) -> Tensor:
        """Final state(s) for a (batch, length) block of equal-length sentences."""
        x = nd.embedding(self.emb, ids)  # (B, L, d_w)
        steps = [x[:, t, :] for t in range(ids.shape[1])]
        h_f = run_gru(steps, self.fwd)[-1]
        if self.bwd is None:
            return h_f
        h_b = run_gru(steps[::-1], self.bwd)[-1]
        return nd.concat([h_f, h_b], axis=1)


@dataclass
class DecoderParams:
    gru: GRUParams
    W_out: Tensor
    b_out: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.gru.named(f"{prefix}.gru")
        out[f"{prefix}.W_out"] = self.W_out
        out[f"{prefix}.b_out"] = self.b_out
        return out


def decoder_step(prev_ids, h_prev: Tensor, cond: Tensor, dec: DecoderParams, emb: Tensor,
                 cond_terms=None) -> tuple[Tensor, Tensor]:
    """Condition on ``cond``, feed the previous word, return (vocab logits, new state)."""
    prev_ids = np.asarray(prev_ids, dtype=np.int64)
    if prev_ids.size and (prev_ids.min() < 0 or prev_ids.max() >= emb.shape[0]):
        raise IndexError("decoder_step: word id outside the vocabulary")
    x = nd.embedding(emb, prev_ids)
    h = gru_cell(x, h_prev, dec.gru, condition=None if cond_terms else cond, cond_terms=cond_terms)
    return nd.linear(h, dec.W_out) + dec.b_out, h


def teacher_forced_nll(targets: Sequence[TokenizedSentence], cond: Tensor, dec: DecoderParams,
                       emb: Tensor) -> Tensor:
    """Summed negative log-likelihood of each target given its conditioning row."""
    lengths = [len(t) for t in targets]
    width = max(lengths)
    ids = np.full((len(targets), width), PAD, dtype=np.int64)
    for i, t in enumerate(targets):
        ids[i, :len(t)] = t.ids
    inputs, outputs = ids[:, :-1], ids[:, 1:]
    mask = (outputs != PAD).astype(np.float64)
    steps = inputs.shape[1]

    terms = dec.gru.condition_terms(cond)
    x = nd.embedding(emb, inputs)
    h = Tensor(np.zeros((len(targets), dec.gru.hidden)))
    states = []
    for t in range(steps):
        h = gru_cell(x[:, t, :], h, dec.gru, cond_terms=terms)
        states.append(h)
    hs = nd.reshape(nd.stack(states, axis=1), (len(targets) * steps, dec.gru.hidden))
    logp = nd.log_softmax(nd.linear(hs, dec.W_out) + dec.b_out)
    picked = logp[np.arange(len(targets) * steps), outputs.reshape(-1)]
    return -nd.tsum(picked * mask.reshape(-1))


class SkipThought:
    """Uni/bi/combine-skip encoder with next- and previous-sentence decoders."""

    def __init__(self, vocab_size: int, config: SkipThoughtConfig | None = None):
        self.config = cfg = config or SkipThoughtConfig()
        self.vocab_size = vocab_size
        rng = np.random.default_rng(cfg.seed)
        half = cfg.h_enc // 2
        self.uni: EncoderParams | None = None
        self.bi: EncoderParams | None = None
        if cfg.mode in ("uni", "combine-skip"):
            self.uni = EncoderParams(nd.uniform_param(rng, (vocab_size, cfg.d_w)),
                                     GRUParams.init(rng, cfg.d_w, cfg.h_enc))
        if cfg.mode in ("bi", "combine-skip"):
            self.bi = EncoderParams(nd.uniform_param(rng, (vocab_size, cfg.d_w)),
                                    GRUParams.init(rng, cfg.d_w, half), GRUParams.init(rng, cfg.d_w, half))
        self.dec_emb = nd.uniform_param(rng, (vocab_size, cfg.d_w))
        self.dec_next = self._init_decoder(rng)
        self.dec_prev = self._init_decoder(rng)
        for name, t in self.named_parameters().items():
            t.name = name

    def _init_decoder(self, rng) -> DecoderParams:
        cfg = self.config
        return DecoderParams(GRUParams.init(rng, cfg.d_w, cfg.h_dec, d_cond=cfg.dim),
                             nd.dense_param(rng, (self.vocab_size, cfg.h_dec)),
                             nd.zeros_param((self.vocab_size,)))

    @property
    def dim(self) -> int:
        return self.config.dim

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.uni is not None:
            out.update(self.uni.named("uni"))
        if self.bi is not None:
            out.update(self.bi.named("bi"))
        out["dec_emb"] = self.dec_emb
        out.update(self.dec_next.named("dec_next"))
        out.update(self.dec_prev.named("dec_prev"))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def decoder(self, which: str) -> DecoderParams:
        if which not in ("next", "prev"):
            raise ValueError("decoder must be 'next' or 'prev'")
        return self.dec_next if which == "next" else self.dec_prev

    # -- encoding -----------------------------------------------------------
    def encode_ids(self, ids: np.ndarray) -> Tensor:
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[1] == 0:
            raise ValueError("cannot encode an empty sentence")
        parts = []
        if self.uni is not None:
            parts.append(self.uni.encode(ids))
        if self.bi is not None:
            parts.append(self.bi.encode(ids))
        return parts[0] if len(parts) == 1 else nd.concat(parts, axis=1)

    def encode(self, sentences: Sequence[TokenizedSentence], batch_size: int = 64) -> np.ndarray:
        """Sentence vectors (N, dim) in input order, computed without a graph."""
        out = np.zeros((len(sentences), self.dim))
        indexed = list(enumerate(sentences))
        with nd.no_grad():
            for batch in batch_same_length(indexed, batch_size, key=lambda p: len(p[1])):
                ids = np.array([s.ids for _, s in batch], dtype=np.int64)
                vecs = self.encode_ids(ids).data
                for (i, _), v in zip(batch, vecs):
                    out[i] = v
        return out

    # -- objective ----------------------------------------------------------
    def batch_loss(self, triples: Sequence[SentenceTriple]) -> Tensor:
        """Mean over triples of the summed next+previous sentence NLL.

        All centre sentences must share a length.
        """
        centers = np.array([t.current.ids for t in triples], dtype=np.int64)
        h_i = self.encode_ids(centers)
        nll = (teacher_forced_nll([t.next for t in triples], h_i, self.dec_next, self.dec_emb)
               + teacher_forced_nll([t.prev for t in triples], h_i, self.dec_prev, self.dec_emb))
        return nll * (1.0 / len(triples))


def st_loss(triple: SentenceTriple, model: SkipThought) -> Tensor:
    """Negative summed log-probability of both neighbours given the centre."""
    return model.batch_loss([triple])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    steps: int = 0


def snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def restore(params: dict[str, Tensor], state: dict[str, np.ndarray]) -> None:
    for k, v in params.items():
        v.data[...] = state[k]


def train_skipthought(triples: Sequence[SentenceTriple], model: SkipThought,
                      epochs: int | None = None,
                      on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Adam + global-norm clipping over shuffled same-length batches.

    Batches are grouped by centre-sentence length.  ``on_epoch`` is called
    with (epoch, mean loss) after each epoch, e.g. to write a checkpoint.
    """
    if not triples:
        raise ValueError("need at least one triple")
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    params = model.named_parameters()
    opt = nd.Adam(params.values(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    result = TrainResult()
    good = snapshot(params)
    for epoch in range(1, epochs + 1):
        batches = batch_same_length(triples, cfg.batch_size, seed=int(rng.integers(2**31)),
                                    key=lambda t: len(t.current))
        total = 0.0
        for k in rng.permutation(len(batches)):
            batch = batches[k]
            loss = model.batch_loss(batch)
            value = loss.item()
            if not math.isfinite(value):
                restore(params, good)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            nd.backward(loss)
            nd.clip_global_norm(opt.params, cfg.clip_norm)
            opt.step()
            result.steps += 1
            total += value * len(batch)
        mean_loss = total / len(triples)
        result.losses.append(mean_loss)
        good = snapshot(params)
        log.info("skip-thought epoch %d mean loss %.4f", epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return result


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Decoded:
    ids: tuple[int, ...]
    truncated: bool

    @property
    def body(self) -> tuple[int, ...]:
        return self.ids[1:-1] if not self.truncated else self.ids[1:]

    def sentence(self) -> TokenizedSentence:
        return TokenizedSentence(self.ids if not self.truncated else self.ids + (EOS,))


def _decode(vectors: np.ndarray, dec: DecoderParams, emb: Tensor, max_len: int,
            pick: Callable[[np.ndarray], np.ndarray]) -> list[Decoded]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    n = len(vectors)
    seqs = [[BOS] for _ in range(n)]
    done = np.zeros(n, dtype=bool)
    with nd.no_grad():
        cond = Tensor(vectors)
        terms = dec.gru.condition_terms(cond)
        h = Tensor(np.zeros((n, dec.gru.hidden)))
        prev = np.full(n, BOS, dtype=np.int64)
        for _ in range(max_len):
            logits, h = decoder_step(prev, h, cond, dec, emb, cond_terms=terms)
            scores = logits.data.copy()
            # padding and <s> are never valid outputs
            scores[:, [PAD, BOS]] = -np.inf
            nxt = pick(scores)
            for i in np.flatnonzero(~done):
                seqs[i].append(int(nxt[i]))
                if nxt[i] == EOS:
                    done[i] = True
            if done.all():
                break
            prev = nxt
    return [Decoded(tuple(s), s[-1] != EOS) for s in seqs]


def greedy_decode(vectors: np.ndarray, dec: DecoderParams, emb: Tensor, max_len: int = 30) -> list[Decoded]:
    """Argmax decoding from <s> until </s> or ``max_len`` generated tokens."""
    return _decode(vectors, dec, emb, max_len, lambda logits: logits.argmax(axis=1))


def sample_decode(vectors: np.ndarray, dec: DecoderParams, emb: Tensor, beam_width: int = 5,
                  temperature: float = 1.0, seed: int = 0, max_len: int = 30) -> list[Decoded]:
    """Sample each token from the temperature-scaled top-``beam_width`` softmax."""
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(seed)

    def pick(logits: np.ndarray) -> np.ndarray:
        k = min(beam_width, logits.shape[1])
        # stable sort keeps the greedy tie-break (lowest id first)
        top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
        z = np.take_along_axis(logits, top, axis=1) / temperature
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        u = rng.random(len(logits))
        choice = np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), k - 1)
        return top[np.arange(len(logits)), choice]

    return _decode(vectors, dec, emb, max_len, pick)


# ---------------------------------------------------------------------------
# standalone conditional decoder (for GloVe-composed vectors)
# ---------------------------------------------------------------------------

class ConditionalDecoder:
    """A single decoder trained to reproduce a sentence from its own vector."""

    def __init__(self, vocab_size: int, d_cond: int, d_w: int = 64, h_dec: int = 96, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.vocab_size = vocab_size
        self.d_cond = d_cond
        self.emb = nd.uniform_param(rng, (vocab_size, d_w))
        self.dec = DecoderParams(GRUParams.init(rng, d_w, h_dec, d_cond=d_cond),
                                 nd.dense_param(rng, (vocab_size, h_dec)), nd.zeros_param((vocab_size,)))
        for name, t in self.named_parameters().items():
            t.name = name

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"emb": self.emb}
        out.update(self.dec.named("dec"))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def loss(self, vectors: np.ndarray, sentences: Sequence[TokenizedSentence]) -> Tensor:
        return teacher_forced_nll(sentences, Tensor(vectors), self.dec, self.emb) * (1.0 / len(sentences))

    def fit(self, vectors: np.ndarray, sentences: Sequence[TokenizedSentence], epochs: int = 20,
            lr: float = 0.01, batch_size: int = 16, clip_norm: float = 5.0, seed: int = 0) -> list[float]:
        opt = nd.Adam(self.parameters(), lr=lr)
        rng = np.random.default_rng(seed)
        losses = []
        for _ in range(epochs):
            order = rng.permutation(len(sentences))
            total = 0.0
            for lo in range(0, len(order), batch_size):
                idx = order[lo:lo + batch_size]
                loss = self.loss(vectors[idx], [sentences[i] for i in idx])
                nd.backward(loss)
                nd.clip_global_norm(opt.params, clip_norm)
                opt.step()
                total += loss.item() * len(idx)
            losses.append(total / len(sentences))
        return losses


def config_dict(cfg: SkipThoughtConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> SkipThoughtConfig:
    return replace(SkipThoughtConfig(), **d)
