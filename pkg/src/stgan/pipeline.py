"""Experiment configuration and the staged, resumable pipeline.

Stages: prepare -> train-st -> encode -> train-gan -> sample -> evaluate
-> report.  Every stage reads its inputs from disk, so a resumed run and a
fresh run see the same bytes.  A stage is skipped when its artifact exists
and was produced from the same configuration.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import metrics as M
from .checkpoint import Checkpoint, load_into, save_params
from .corpus import Corpus, TokenizedSentence, Vocabulary, build_vocab, encode_ids
from .gan import GAN, GanConfig, gan_train
from .report import write_report
from .sent_embed import compose, load_word_vectors
from .skipthought import (PAPER_SCALE, ConditionalDecoder, SkipThought, SkipThoughtConfig,
                          greedy_decode, sample_decode, train_skipthought)
from . import ndtensor as nd

log = logging.getLogger(__name__)

EMBEDDINGS = {"st": "combine-skip", "glove-avg": "glove-average", "glove-ext": "glove-extrema"}
PRESETS = ("desk", "paper-scale")
STAGES = ("prepare", "train-st", "encode", "train-gan", "sample", "evaluate", "report")


class ValidationError(ValueError):
    """Bad user input; reported before anything is written."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    out: str
    corpus: str | None = None
    word_vectors: str | None = None
    seed: int = 0
    preset: str = "desk"
    embedding: str = "st"
    st: SkipThoughtConfig = field(default_factory=SkipThoughtConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    n_samples: int = 64
    decode: str = "greedy"
    metrics: tuple[str, ...] = M.METRIC_NAMES
    snapshot_every: int = 0
    decoder_epochs: int = 20

    @classmethod
    def from_preset(cls, preset: str, out: str, seed: int = 0, **kw) -> "ExperimentConfig":
        if preset not in PRESETS:
            raise ValidationError(f"preset must be one of {PRESETS}, got {preset!r}")
        st = PAPER_SCALE if preset == "paper-scale" else SkipThoughtConfig()
        gan = GanConfig(data_dim=st.dim)
        if preset == "paper-scale":
            gan = replace(gan, noise_dim=100, g_hidden=(2400, 2400), d_hidden=(2400, 1200))
        cfg = cls(out=out, seed=seed, preset=preset, st=replace(st, seed=seed), gan=replace(gan, seed=seed))
        return cfg.override(**kw)

    def override(self, **kw) -> "ExperimentConfig":
        """Apply overrides; ``st``/``gan`` accept dicts of field updates."""
        st = kw.pop("st", None)
        gan = kw.pop("gan", None)
        cfg = replace(self, **kw)
        try:
            if st:
                cfg.st = replace(cfg.st, **st)
            if gan:
                gan = dict(gan)
                for key in ("g_hidden", "d_hidden"):
                    if key in gan:
                        gan[key] = tuple(gan[key])
                cfg.gan = replace(cfg.gan, **gan)
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc)) from exc
        if "seed" in kw:
            cfg.st = replace(cfg.st, seed=cfg.seed)
            cfg.gan = replace(cfg.gan, seed=cfg.seed)
        return cfg

    def validate(self, need_corpus: bool = True) -> None:
        if self.embedding not in EMBEDDINGS:
            raise ValidationError(f"embedding must be one of {sorted(EMBEDDINGS)}")
        if self.decode not in ("greedy", "sample"):
            raise ValidationError("decode must be 'greedy' or 'sample'")
        if need_corpus and (self.corpus is None or not Path(self.corpus).is_file()):
            raise ValidationError(f"corpus file not found: {self.corpus}")
        if self.embedding != "st":
            if self.word_vectors is None or not Path(self.word_vectors).is_file():
                raise ValidationError(f"--word-vectors file required for {self.embedding}")
        if self.word_vectors is not None and not Path(self.word_vectors).is_file():
            raise ValidationError(f"word-vector file not found: {self.word_vectors}")
        unknown = set(self.metrics) - set(M.METRIC_NAMES)
        if unknown:
            raise ValidationError(f"unknown metrics {sorted(unknown)}")
        if self.n_samples < 1:
            raise ValidationError("n_samples must be positive")

    @property
    def run_name(self) -> str:
        return self.gan.fmeasure + ("-mbd" if self.gan.minibatch_disc else "")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["st"] = asdict(self.st)
        d["gan"] = self.gan.to_dict()
        d["metrics"] = list(self.metrics)
        return d


# ---------------------------------------------------------------------------
# artifact layout
# ---------------------------------------------------------------------------

class Layout:
    def __init__(self, cfg: ExperimentConfig):
        self.root = Path(cfg.out)
        self.emb = cfg.embedding
        self.run = f"{cfg.embedding}_{cfg.run_name}"

    vocab = property(lambda s: s.root / "vocab.tsv")
    prepare_meta = property(lambda s: s.root / "prepare.json")
    st_ckpt = property(lambda s: s.root / "st.ckpt")
    st_history = property(lambda s: s.root / "st_loss.csv")
    decoder_ckpt = property(lambda s: s.root / f"decoder_{s.emb}.ckpt")
    embeddings = property(lambda s: s.root / f"embeddings_{s.emb}.ckpt")
    gan_ckpt = property(lambda s: s.root / f"gan_{s.run}.ckpt")
    gan_history = property(lambda s: s.root / f"gan_{s.run}_loss.csv")
    snapshots = property(lambda s: s.root / f"snapshots_{s.run}")
    samples = property(lambda s: s.root / f"samples_{s.run}.txt")
    report = property(lambda s: s.root / "report.csv")

    def split(self, name: str) -> Path:
        return self.root / f"{name}.txt"


def _fingerprint_ok(path: Path, fingerprint: dict) -> bool:
    if not path.exists():
        return False
    try:
        return Checkpoint.load(path).config.get("fingerprint") == fingerprint
    except (ValueError, KeyError, json.JSONDecodeError):
        return False


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_prepare(cfg: ExperimentConfig, force: bool = False) -> None:
    lay = Layout(cfg)
    meta = {"corpus": str(Path(cfg.corpus).resolve()), "seed": cfg.seed}
    if not force and lay.prepare_meta.exists() and json.loads(lay.prepare_meta.read_text()) == meta:
        log.info("prepare: up to date")
        return
    corpus = Corpus.read(cfg.corpus)
    if not corpus.documents:
        raise ValidationError(f"{cfg.corpus}: no sentences")
    train, valid, test = corpus.split(cfg.seed)
    if not train.documents:
        raise ValidationError(f"{cfg.corpus}: too small to split")
    lay.root.mkdir(parents=True, exist_ok=True)
    build_vocab(train.sentences).save(lay.vocab)
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        part.write(lay.split(name))
    log.info("prepare: train=%d valid=%d test=%d dropped=%d", len(train.sentences),
             len(valid.sentences), len(test.sentences), corpus.n_dropped)
    lay.prepare_meta.write_text(json.dumps(meta, sort_keys=True) + "\n")


def _load_split(lay: Layout, name: str) -> Corpus:
    path = lay.split(name)
    if not path.exists() or not path.read_text(encoding="utf-8").strip():
        return Corpus([], [])
    return Corpus.read(path)


def _flat_sentences(corpus: Corpus, vocab: Vocabulary) -> list[TokenizedSentence]:
    return [s for doc in corpus.encode(vocab) for s in doc]


def _st_fingerprint(cfg: ExperimentConfig) -> dict:
    return {"st": asdict(cfg.st), "prepare": json.loads(Layout(cfg).prepare_meta.read_text())}


def stage_train_st(cfg: ExperimentConfig, force: bool = False) -> None:
    """Train the text model for the selected embedding.

    Skip-thought vectors use the skip-thought model itself; GloVe-composed
    vectors get a conditional decoder trained to reproduce each sentence.
    """
    lay = Layout(cfg)
    vocab = Vocabulary.load(lay.vocab)
    train, valid = _load_split(lay, "train"), _load_split(lay, "valid")
    if cfg.embedding == "st":
        fp = _st_fingerprint(cfg)
        if not force and _fingerprint_ok(lay.st_ckpt, fp):
            log.info("train-st: up to date")
            return
        triples = train.triples(vocab)
        valid_triples = valid.triples(vocab)
        model = SkipThought(len(vocab), cfg.st)
        rows: list[list] = []

        def on_epoch(epoch: int, loss: float) -> None:
            rows.append([epoch, "train", f"{loss:.6f}"])
            if valid_triples:
                with nd.no_grad():
                    vl = np.mean([model.batch_loss([t]).item() for t in valid_triples])
                rows.append([epoch, "valid", f"{vl:.6f}"])
            # partial checkpoints carry no fingerprint, so an interrupted run retrains
            save_params(lay.st_ckpt, "skipthought", {"epochs_done": epoch, "vocab_size": len(vocab)},
                        model.named_parameters())

        train_skipthought(triples, model, on_epoch=on_epoch)
        _write_csv(lay.st_history, ["epoch", "split", "loss"], rows)
        save_params(lay.st_ckpt, "skipthought", {"fingerprint": fp, "vocab_size": len(vocab)},
                    model.named_parameters())
        return
    fp = {"embedding": cfg.embedding, "word_vectors": str(Path(cfg.word_vectors).resolve()),
          "d_w": cfg.st.d_w, "h_dec": cfg.st.h_dec, "epochs": cfg.decoder_epochs, "seed": cfg.seed,
          "prepare": json.loads(lay.prepare_meta.read_text())}
    if not force and _fingerprint_ok(lay.decoder_ckpt, fp):
        log.info("train-st: decoder up to date")
        return
    table = load_word_vectors(cfg.word_vectors)
    vectors = compose(train.sentences, table, EMBEDDINGS[cfg.embedding])
    sents = _flat_sentences(train, vocab)
    dec = ConditionalDecoder(len(vocab), table.dim, cfg.st.d_w, cfg.st.h_dec, seed=cfg.seed)
    losses = dec.fit(vectors, sents, epochs=cfg.decoder_epochs, lr=cfg.st.lr, seed=cfg.seed)
    _write_csv(lay.root / f"decoder_{cfg.embedding}_loss.csv", ["epoch", "split", "loss"],
               [[k + 1, "train", f"{v:.6f}"] for k, v in enumerate(losses)])
    save_params(lay.decoder_ckpt, "decoder", {"fingerprint": fp, "d_cond": table.dim},
                dec.named_parameters())


def _load_st(lay: Layout, cfg: ExperimentConfig) -> SkipThought:
    ckpt = Checkpoint.load(lay.st_ckpt)
    model = SkipThought(int(ckpt.config["vocab_size"]), cfg.st)
    load_into(lay.st_ckpt, model.named_parameters(), "skipthought")
    return model


def _load_decoder(lay: Layout, cfg: ExperimentConfig, vocab_size: int) -> ConditionalDecoder:
    ckpt = Checkpoint.load(lay.decoder_ckpt)
    dec = ConditionalDecoder(vocab_size, int(ckpt.config["d_cond"]), cfg.st.d_w, cfg.st.h_dec)
    load_into(lay.decoder_ckpt, dec.named_parameters(), "decoder")
    return dec


def stage_encode(cfg: ExperimentConfig, force: bool = False) -> None:
    lay = Layout(cfg)
    source = lay.st_ckpt if cfg.embedding == "st" else lay.decoder_ckpt
    fp = {"source": Checkpoint.load(source).config["fingerprint"], "embedding": cfg.embedding}
    if not force and _fingerprint_ok(lay.embeddings, fp):
        log.info("encode: up to date")
        return
    vocab = Vocabulary.load(lay.vocab)
    train = _load_split(lay, "train")
    if cfg.embedding == "st":
        vectors = _load_st(lay, cfg).encode(_flat_sentences(train, vocab))
    else:
        vectors = compose(train.sentences, load_word_vectors(cfg.word_vectors), EMBEDDINGS[cfg.embedding])
    Checkpoint("embeddings", {"fingerprint": fp}, {"vectors": vectors}).save(lay.embeddings)


def _decoder_fn(lay: Layout, cfg: ExperimentConfig) -> Callable[[np.ndarray, int], list[str]]:
    vocab = Vocabulary.load(lay.vocab)
    if cfg.embedding == "st":
        model = _load_st(lay, cfg)
        dec, emb = model.decoder("next"), model.dec_emb
    else:
        cd = _load_decoder(lay, cfg, len(vocab))
        dec, emb = cd.dec, cd.emb

    def decode(vectors: np.ndarray, seed: int) -> list[str]:
        if cfg.decode == "greedy":
            out = greedy_decode(vectors, dec, emb, cfg.st.max_decode_len)
        else:
            out = sample_decode(vectors, dec, emb, cfg.st.beam_width, cfg.st.temperature, seed,
                                cfg.st.max_decode_len)
        return [" ".join(vocab.decode(d.ids)) for d in out]

    return decode


def _gan_config(cfg: ExperimentConfig, dim: int) -> GanConfig:
    return replace(cfg.gan, data_dim=dim)


def stage_train_gan(cfg: ExperimentConfig, force: bool = False) -> None:
    lay = Layout(cfg)
    emb = Checkpoint.load(lay.embeddings)
    vectors = emb.tensors["vectors"]
    gcfg = _gan_config(cfg, vectors.shape[1])
    fp = {"gan": gcfg.to_dict(), "embeddings": emb.config["fingerprint"],
          "snapshot_every": cfg.snapshot_every}
    if not force and _fingerprint_ok(lay.gan_ckpt, fp):
        log.info("train-gan: up to date")
        return
    gan, result = gan_train(vectors, gcfg, snapshot_every=cfg.snapshot_every)
    _write_csv(lay.gan_history, ["round", "d_loss", "g_loss", "grad_norm"],
               [[h.round, f"{h.d_loss:.6f}", f"{h.g_loss:.6f}", "" if np.isnan(h.grad_norm) else f"{h.grad_norm:.6f}"]
                for h in result.history])
    if result.snapshots:
        decode = _decoder_fn(lay, cfg)
        lay.snapshots.mkdir(exist_ok=True)
        for k, (rnd, vecs) in enumerate(result.snapshots, start=1):
            text = "\n".join(decode(vecs, cfg.seed + rnd)) + "\n"
            (lay.snapshots / f"sample_{k:04d}_round{rnd}.txt").write_text(text, encoding="utf-8")
    save_params(lay.gan_ckpt, "gan", {"fingerprint": fp, "d_steps": result.d_steps,
                                      "g_steps": result.g_steps}, gan.named_parameters())
    log.info("train-gan: %d rounds, final d_loss %.4f g_loss %.4f", len(result.history),
             result.history[-1].d_loss, result.history[-1].g_loss)


def load_gan(cfg: ExperimentConfig) -> GAN:
    lay = Layout(cfg)
    ckpt = Checkpoint.load(lay.gan_ckpt)
    gan = GAN(GanConfig.from_dict({**ckpt.config["fingerprint"]["gan"]}))
    load_into(lay.gan_ckpt, gan.named_parameters(), "gan")
    return gan


def stage_sample(cfg: ExperimentConfig, force: bool = False) -> list[str]:
    lay = Layout(cfg)
    gan = load_gan(cfg)
    decode = _decoder_fn(lay, cfg)
    vectors = gan.generate(cfg.n_samples, np.random.default_rng(cfg.seed + 104729))
    lines = decode(vectors, cfg.seed)
    lay.samples.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return lines


def read_lines(path: str | Path) -> list[list[str]]:
    return [line.split() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def evaluate_files(hyp: str | Path, ref: str | Path, names=M.METRIC_NAMES, ref_mode: str = "pool") -> dict[str, float]:
    """Score a hypothesis file against a reference file, one sentence per line.

    ``pool``: every hypothesis is scored against all reference lines.
    ``aligned``: line i of hyp is scored against line i of ref.
    """
    hyps, refs = read_lines(hyp), read_lines(ref)
    if not hyps or not refs:
        raise ValidationError("hypothesis and reference files must be non-empty")
    if ref_mode == "aligned":
        if len(hyps) != len(refs):
            raise ValidationError(f"aligned mode needs equal line counts ({len(hyps)} vs {len(refs)})")
        pairs = [M.EvalPair(h, [r]) for h, r in zip(hyps, refs)]
    elif ref_mode == "pool":
        pairs = [M.EvalPair(h, refs) for h in hyps]
    else:
        raise ValidationError("ref_mode must be 'pool' or 'aligned'")
    return M.compute(pairs, names)


def merge_report(path: Path, model: str, embedding: str, scores: dict[str, float]) -> M.MetricReport:
    report = M.MetricReport.read(path) if path.exists() else M.MetricReport()
    report.rows = [r for r in report.rows if not (r[0] == model and r[1] == embedding and r[2] in scores)]
    for name, value in scores.items():
        report.add(model, embedding, name, value)
    report.write(path)
    return report


def stage_evaluate(cfg: ExperimentConfig, force: bool = False) -> dict[str, float]:
    lay = Layout(cfg)
    ref = lay.split("test")
    if not read_lines(ref):
        ref = lay.split("train")
        log.warning("evaluate: empty test split, scoring against the training split")
    scores = evaluate_files(lay.samples, ref, cfg.metrics)
    merge_report(lay.report, cfg.run_name, cfg.embedding, scores)
    return scores


def stage_report(cfg: ExperimentConfig, force: bool = False) -> list[Path]:
    lay = Layout(cfg)
    if not lay.report.exists():
        raise ValidationError(f"no report at {lay.report}; run evaluate first")
    histories = {p.stem: p for p in sorted(lay.root.glob("*_loss.csv"))}
    return write_report(M.MetricReport.read(lay.report), lay.root, histories)


STAGE_FUNCS = {"prepare": stage_prepare, "train-st": stage_train_st, "encode": stage_encode,
               "train-gan": stage_train_gan, "sample": stage_sample, "evaluate": stage_evaluate,
               "report": stage_report}


def run_pipeline(cfg: ExperimentConfig, stages=STAGES, force: bool = False) -> Path:
    """Run ``stages`` in order and return the report path."""
    cfg.validate()
    for name in stages:
        log.info("stage %s", name)
        try:
            STAGE_FUNCS[name](cfg, force)
        except ValidationError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
    return Layout(cfg).report
