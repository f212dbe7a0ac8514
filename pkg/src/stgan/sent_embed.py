"""Word-vector tables and GloVe-style sentence compositions."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _accel

log = logging.getLogger(__name__)

KINDS = ("combine-skip", "glove-average", "glove-extrema")


@dataclass
class WordVectorTable:
    tokens: list[str]
    vectors: np.ndarray  # (n, d)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.tokens) != len(self.vectors):
            raise ValueError("tokens and vectors disagree in count")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in word-vector table")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[self.index[token]]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok, vec in zip(self.tokens, self.vectors):
                fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def load_word_vectors(path: str | Path) -> WordVectorTable:
    """Read the text format ``token v1 ... vd``; the first line fixes d.

    A repeated token keeps its last vector.
    """
    entries: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not parts or not parts[0]:
                continue
            values = np.array([float(x) for x in parts[1:] if x], dtype=np.float64)
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise ValueError(f"{path}:{no}: no vector values")
            elif len(values) != dim:
                raise ValueError(f"{path}:{no}: expected {dim} values, found {len(values)}")
            if parts[0] in entries:
                log.warning("%s:%d: duplicate token %r, keeping the last vector", path, no, parts[0])
                del entries[parts[0]]
            entries[parts[0]] = values
    if not entries:
        raise ValueError(f"{path}: empty word-vector file")
    return WordVectorTable(list(entries), np.stack(list(entries.values())))


def random_table(tokens: Iterable[str], dim: int = 50, seed: int = 0) -> WordVectorTable:
    """Seeded Gaussian vectors for when no pretrained table is available."""
    tokens = list(tokens)
    rng = np.random.default_rng(seed)
    return WordVectorTable(tokens, rng.normal(0.0, 1.0 / np.sqrt(dim), size=(len(tokens), dim)))


def _present(sentence: Sequence[str], table: WordVectorTable) -> np.ndarray | None:
    rows = [table.index[t] for t in sentence if t in table.index]
    if not rows:
        log.warning("no token of %r is in the word-vector table; using a zero vector", " ".join(sentence))
        return None
    return table.vectors[rows]


def compose_average(sentence: Sequence[str], table: WordVectorTable) -> np.ndarray:
    vecs = _present(sentence, table)
    return np.zeros(table.dim) if vecs is None else vecs.mean(axis=0)


def compose_extrema(sentence: Sequence[str], table: WordVectorTable) -> np.ndarray:
    """Per dimension, the signed value of largest magnitude; ties go to the earlier word."""
    vecs = _present(sentence, table)
    if vecs is None:
        return np.zeros(table.dim)
    # argmax returns the first maximal row, which is the earlier word
    rows = np.abs(vecs).argmax(axis=0)
    return vecs[rows, np.arange(table.dim)]


def compose(sentences: Sequence[Sequence[str]], table: WordVectorTable, kind: str) -> np.ndarray:
    fn = {"glove-average": compose_average, "glove-extrema": compose_extrema}.get(kind)
    if fn is None:
        raise ValueError(f"unknown composition {kind!r}")
    return np.stack([fn(s, table) for s in sentences]) if sentences else np.zeros((0, table.dim))


def nearest_word(vector, table: WordVectorTable, metric: str = "cosine") -> str:
    """Closest token under ``metric``; ties resolve to the earlier table row."""
    if len(table) == 0:
        raise ValueError("empty word-vector table")
    v = np.asarray(vector, dtype=np.float64)
    if metric == "euclidean":
        return table.tokens[_accel.argmin_sqdist(v, table.vectors)]
    if metric == "cosine":
        norms = np.linalg.norm(table.vectors, axis=1) * max(np.linalg.norm(v), 1e-300)
        sims = table.vectors @ v / np.where(norms == 0, 1.0, norms)
        return table.tokens[int(np.argmax(sims))]
    raise ValueError(f"metric must be 'cosine' or 'euclidean', got {metric!r}")
