"""Tokenisation, vocabularies, sentence triples and same-length batching."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
MAX_SENTENCE_TOKENS = 30

_CLITIC_NT = re.compile(r"(\w)n't\b")
_CLITIC = re.compile(r"(\w)'(s|re|ve|ll|m|d)\b")
_PUNCT = re.compile(r"([.,!?;:\"()\[\]{}])")


def tokenize(line: str) -> list[str]:
    """Lowercase, split clitics ("can't" -> "ca n't") and detach punctuation."""
    text = line.lower().replace("’", "'").replace("‘", "'")
    text = _CLITIC_NT.sub(r"\1 n't", text)
    text = _CLITIC.sub(r"\1 '\2", text)
    text = _PUNCT.sub(r" \1 ", text)
    return text.split()


class Vocabulary:
    """Token/id mapping with reserved ids 0=pad, 1=<s>, 2=</s>, 3=<unk>."""

    def __init__(self, tokens: Sequence[str], freqs: Sequence[int] | None = None):
        self.itos: list[str] = list(RESERVED) + list(tokens)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")
        self.freqs: list[int] = [0] * len(RESERVED) + list(freqs if freqs is not None else [0] * len(tokens))

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        words = [self.itos[i] for i in ids]
        if strip:
            words = [w for w in words if w not in ("<pad>", "<s>", "</s>")]
        return words

    def save(self, path: str | Path) -> None:
        lines = [f"{tok}\t{i}\t{f}\n" for i, (tok, f) in enumerate(zip(self.itos, self.freqs))]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        rows = [ln.split("\t") for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]
        rows.sort(key=lambda r: int(r[1]))
        if tuple(r[0] for r in rows[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: reserved tokens missing or reordered")
        body = rows[len(RESERVED):]
        return cls([r[0] for r in body], [int(r[2]) for r in body])


def build_vocab(corpus: Iterable[str | Sequence[str]], min_freq: int = 1, cap: int | None = None) -> Vocabulary:
    """Frequency-sorted vocabulary (ties broken lexicographically).

    ``corpus`` holds raw lines or already-tokenised sentences.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts: Counter[str] = Counter()
    n_lines = 0
    for line in corpus:
        n_lines += 1
        counts.update(tokenize(line) if isinstance(line, str) else line)
    if n_lines == 0 or not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    for tok in RESERVED:
        counts.pop(tok, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    if cap is not None:
        kept = kept[:cap]
    return Vocabulary(kept, [counts[t] for t in kept])


@dataclass(frozen=True)
class TokenizedSentence:
    ids: tuple[int, ...]
    line: int = -1

    def __post_init__(self):
        if len(self.ids) < 2 or self.ids[0] != BOS or self.ids[-1] != EOS:
            raise ValueError("sentence ids must start with <s> and end with </s>")
        if PAD in self.ids:
            raise ValueError("padding id inside a sentence")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def body(self) -> tuple[int, ...]:
        return self.ids[1:-1]


@dataclass(frozen=True)
class SentenceTriple:
    prev: TokenizedSentence
    current: TokenizedSentence
    next: TokenizedSentence


def encode_ids(tokens: Sequence[str], vocab: Vocabulary, line: int = -1) -> TokenizedSentence:
    return TokenizedSentence((BOS, *(vocab.lookup(t) for t in tokens), EOS), line)


def make_triples(document: Sequence[TokenizedSentence]) -> list[SentenceTriple]:
    if len(document) < 3:
        log.warning("document with %d sentences yields no triples", len(document))
        return []
    return [SentenceTriple(document[i - 1], document[i], document[i + 1])
            for i in range(1, len(document) - 1)]


T = TypeVar("T")


def batch_same_length(items: Sequence[T], batch_size: int = 16, seed: int | None = None,
                      key: Callable[[T], int] = len) -> list[list[T]]:
    """Group items by exact ``key`` length into batches of at most ``batch_size``.

    Groups come out in ascending length.  Within a group items keep corpus
    order unless a seed is given, in which case they are shuffled with it.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    groups: dict[int, list[T]] = {}
    for item in items:
        groups.setdefault(key(item), []).append(item)
    rng = np.random.default_rng(seed) if seed is not None else None
    batches = []
    for length in sorted(groups):
        group = groups[length]
        if rng is not None:
            group = [group[i] for i in rng.permutation(len(group))]
        batches.extend(group[i:i + batch_size] for i in range(0, len(group), batch_size))
    return batches


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------

def read_documents(path: str | Path) -> list[list[tuple[int, str]]]:
    """Blank-line separated documents of ``(line number, text)`` sentences."""
    docs: list[list[tuple[int, str]]] = [[]]
    for no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if line.strip():
            docs[-1].append((no, line.strip()))
        elif docs[-1]:
            docs.append([])
    return [d for d in docs if d]


@dataclass
class Corpus:
    """Tokenised documents; sentences over the length cap are dropped."""

    documents: list[list[list[str]]]
    lines: list[list[int]]
    n_dropped: int = 0

    @classmethod
    def from_documents(cls, docs: Sequence[Sequence[tuple[int, str] | str]],
                       max_tokens: int = MAX_SENTENCE_TOKENS) -> "Corpus":
        out_docs, out_lines, dropped = [], [], 0
        for doc in docs:
            toks_doc, lines_doc = [], []
            for k, entry in enumerate(doc):
                no, text = entry if isinstance(entry, tuple) else (k + 1, entry)
                toks = tokenize(text)
                if not toks:
                    continue
                if len(toks) > max_tokens:
                    dropped += 1
                    continue
                toks_doc.append(toks)
                lines_doc.append(no)
            if toks_doc:
                out_docs.append(toks_doc)
                out_lines.append(lines_doc)
        if dropped:
            log.info("dropped %d sentences longer than %d tokens", dropped, max_tokens)
        return cls(out_docs, out_lines, dropped)

    @classmethod
    def read(cls, path: str | Path, max_tokens: int = MAX_SENTENCE_TOKENS) -> "Corpus":
        return cls.from_documents(read_documents(path), max_tokens)

    @property
    def sentences(self) -> list[list[str]]:
        return [s for doc in self.documents for s in doc]

    def encode(self, vocab: Vocabulary) -> list[list[TokenizedSentence]]:
        return [[encode_ids(s, vocab, no) for s, no in zip(doc, lines)]
                for doc, lines in zip(self.documents, self.lines)]

    def triples(self, vocab: Vocabulary) -> list[SentenceTriple]:
        return [t for doc in self.encode(vocab) for t in make_triples(doc)]

    def split(self, seed: int, ratios: tuple[int, int, int] = (5, 1, 1)) -> tuple["Corpus", "Corpus", "Corpus"]:
        """Seeded 5/1/1 split by sentence count over whole documents.

        Documents are kept intact so triples never straddle a split.
        """
        order = np.random.default_rng(seed).permutation(len(self.documents))
        total = sum(len(d) for d in self.documents)
        bounds = np.cumsum(ratios) / sum(ratios) * total
        parts: list[list[int]] = [[], [], []]
        seen = 0
        for i in order:
            part = int(np.searchsorted(bounds, seen, side="right"))
            parts[min(part, 2)].append(int(i))
            seen += len(self.documents[i])
        return tuple(Corpus([self.documents[i] for i in p], [self.lines[i] for i in p]) for p in parts)

    def write(self, path: str | Path) -> None:
        blocks = ["\n".join(" ".join(s) for s in doc) for doc in self.documents]
        Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")
