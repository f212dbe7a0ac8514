"""Corpus metrics (BLEU-n, ROUGE, METEOR-lite), Pearson r and rating tables."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _accel

log = logging.getLogger(__name__)

BLEU_EPS = 1e-9
METRIC_NAMES = ("bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "rouge1", "rouge2", "meteor")


@dataclass
class EvalPair:
    hypothesis: list[str]
    references: list[list[str]]

    def __post_init__(self):
        if not self.references:
            raise ValueError("an evaluation pair needs at least one reference")


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    if n < 1:
        raise ValueError("n must be >= 1")
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _require(pairs: Sequence[EvalPair]) -> None:
    if not pairs:
        raise ValueError("empty evaluation corpus")


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------

def _closest_ref_len(hyp_len: int, refs: Sequence[Sequence[str]]) -> int:
    return min((abs(len(r) - hyp_len), len(r)) for r in refs)[1]


def bleu_stats(pairs: Sequence[EvalPair], max_n: int) -> tuple[list[int], list[int], int, int]:
    """Pooled clipped matches and totals per order, plus (hyp, ref) lengths."""
    matches = [0] * max_n
    totals = [0] * max_n
    c = r = 0
    for p in pairs:
        hyp = p.hypothesis
        c += len(hyp)
        r += _closest_ref_len(len(hyp), p.references)
        for k in range(1, max_n + 1):
            h = ngram_counts(hyp, k)
            best: Counter = Counter()
            for ref in p.references:
                best |= ngram_counts(ref, k)
            matches[k - 1] += sum(min(cnt, best[g]) for g, cnt in h.items())
            totals[k - 1] += max(len(hyp) - k + 1, 0)
    return matches, totals, c, r


def bleu_n(pairs: Sequence[EvalPair], max_n: int = 4) -> float:
    """Corpus BLEU with uniform weights; zero precisions are replaced by 1e-9."""
    _require(pairs)
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in 1..4")
    matches, totals, c, r = bleu_stats(pairs, max_n)
    if c == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        p = m / t if t else 0.0
        log_p += math.log(p if p > 0 else BLEU_EPS)
    bp = min(1.0, math.exp(1.0 - r / c))
    return bp * math.exp(log_p / max_n)


# ---------------------------------------------------------------------------
# ROUGE
# ---------------------------------------------------------------------------

class _Ids:
    """Interns tokens so the LCS kernel can compare integers."""

    def __init__(self):
        self.table: dict[str, int] = {}

    def __call__(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.table.setdefault(t, len(self.table)) for t in tokens], dtype=np.int64)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    ids = _Ids()
    return _accel.lcs_length(ids(a), ids(b))


def _rouge_l_pair(hyp_ids: np.ndarray, refs_ids: Sequence[np.ndarray]) -> float:
    best = 0.0
    for ref in refs_ids:
        lcs = _accel.lcs_length(hyp_ids, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(hyp_ids), lcs / len(ref)
        best = max(best, 2 * p * r / (p + r))
    return best


def _rouge_n_pair(hyp: Sequence[str], refs: Sequence[Sequence[str]], n: int) -> float:
    h = ngram_counts(hyp, n)
    best = 0.0
    for ref in refs:
        rc = ngram_counts(ref, n)
        total = sum(rc.values())
        if total:
            best = max(best, sum(min(c, h[g]) for g, c in rc.items()) / total)
    return best


def rouge(pairs: Sequence[EvalPair], variant: str = "L") -> float:
    """ROUGE-L F1 (default) or ROUGE-1/2 recall, averaged over pairs.

    Each pair is scored against its best reference.
    """
    _require(pairs)
    if variant == "L":
        ids = _Ids()
        return float(np.mean([_rouge_l_pair(ids(p.hypothesis), [ids(r) for r in p.references])
                              for p in pairs]))
    if variant in ("1", "2"):
        return float(np.mean([_rouge_n_pair(p.hypothesis, p.references, int(variant)) for p in pairs]))
    raise ValueError(f"unknown ROUGE variant {variant!r}")


# ---------------------------------------------------------------------------
# METEOR without synonymy
# ---------------------------------------------------------------------------

_SUFFIXES = ("ingly", "edly", "ing", "ies", "ied", "ed", "es", "ly", "er", "est", "s")


def stem(word: str) -> str:
    """Strip one common English suffix, keeping at least three characters."""
    for suf in _SUFFIXES:
        if word.endswith(suf) and len(word) - len(suf) >= 3:
            return word[: -len(suf)]
    return word


def align(hyp: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """Greedy left-to-right unigram alignment: exact stage, then stem stage."""
    used_h: set[int] = set()
    used_r: set[int] = set()
    pairs: list[tuple[int, int]] = []
    for key in (lambda w: w, stem):
        ref_keys = [key(w) for w in ref]
        for i, w in enumerate(hyp):
            if i in used_h:
                continue
            k = key(w)
            for j, rk in enumerate(ref_keys):
                if j not in used_r and rk == k:
                    used_h.add(i)
                    used_r.add(j)
                    pairs.append((i, j))
                    break
    return sorted(pairs)


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_pair(hyp: Sequence[str], ref: Sequence[str]) -> float:
    alignment = align(hyp, ref)
    m = len(alignment)
    if m == 0:
        return 0.0
    p, r = m / len(hyp), m / len(ref)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (count_chunks(alignment) / m) ** 3
    return f_mean * (1.0 - penalty)


def meteor_lite(pairs: Sequence[EvalPair]) -> float:
    """Mean over pairs of the best-reference METEOR score (exact + stem stages)."""
    _require(pairs)
    return float(np.mean([max(meteor_pair(p.hypothesis, r) for r in p.references) for p in pairs]))


def compute(pairs: Sequence[EvalPair], names: Iterable[str] = METRIC_NAMES) -> dict[str, float]:
    out = {}
    for name in names:
        if name.startswith("bleu") and name[4:].isdigit():
            out[name] = bleu_n(pairs, int(name[4:]))
        elif name == "rougeL":
            out[name] = rouge(pairs, "L")
        elif name in ("rouge1", "rouge2"):
            out[name] = rouge(pairs, name[-1])
        elif name == "meteor":
            out[name] = meteor_lite(pairs)
        else:
            raise ValueError(f"unknown metric {name!r}; choose from {', '.join(METRIC_NAMES)}")
    return out


# ---------------------------------------------------------------------------
# correlation and human ratings
# ---------------------------------------------------------------------------

def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length sequences of at least 2 values")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ValueError("pearson is undefined for a constant sequence")
    return float(np.clip(dx @ dy / (sx * sy), -1.0, 1.0))


@dataclass
class RatingTable:
    """Weighted rating mass by actual source (rows) and judged source (columns)."""

    real_real: float = 0.0
    real_fake: float = 0.0
    fake_real: float = 0.0
    fake_fake: float = 0.0

    def percentages(self) -> dict[str, tuple[float, float]]:
        """Row percentages (judged real, judged fake) per actual label; empty rows omitted."""
        out = {}
        for label, (a, b) in (("real", (self.real_real, self.real_fake)),
                              ("fake", (self.fake_real, self.fake_fake))):
            total = a + b
            if total == 0:
                log.warning("no weighted ratings for actual=%s; percentages undefined", label)
                continue
            out[label] = (100.0 * a / total, 100.0 * b / total)
        return out

    def to_csv(self) -> str:
        pct = self.percentages()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["actual", "judged_real", "judged_fake", "pct_real", "pct_fake"])
        for label, (a, b) in (("real", (self.real_real, self.real_fake)),
                              ("fake", (self.fake_real, self.fake_fake))):
            pr, pf = pct.get(label, (float("nan"), float("nan")))
            w.writerow([label, f"{a:g}", f"{b:g}", f"{pr:.2f}", f"{pf:.2f}"])
        return buf.getvalue()


def weighted_human_scores(ratings: Iterable[tuple[str, int]]) -> RatingTable:
    """Tally (actual label, rating 1..5) pairs with weight |rating - 3|.

    1-2 means "judged written by the author" (real), 4-5 "judged generated".
    """
    table = RatingTable()
    for label, rating in ratings:
        if label not in ("real", "fake"):
            raise ValueError(f"label must be 'real' or 'fake', got {label!r}")
        if rating not in (1, 2, 3, 4, 5):
            raise ValueError(f"rating must be an integer in 1..5, got {rating!r}")
        weight = abs(rating - 3)
        if rating == 3:
            continue
        judged = "real" if rating < 3 else "fake"
        attr = f"{label}_{judged}"
        setattr(table, attr, getattr(table, attr) + weight)
    return table


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    rows: list[tuple[str, str, str, float]] = field(default_factory=list)

    def add(self, model: str, embedding: str, metric: str, value: float) -> None:
        if not (0.0 <= value <= 1.0) or math.isnan(value):
            raise ValueError(f"{metric}={value} outside [0, 1]")
        self.rows.append((model, embedding, metric, float(value)))

    def sorted_rows(self) -> list[tuple[str, str, str, float]]:
        return sorted(self.rows, key=lambda r: (r[0], r[1], r[2]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "embedding", "metric", "value"])
        for model, emb, metric, value in self.sorted_rows():
            w.writerow([model, emb, metric, f"{value:.6f}"])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        if not self.rows:
            raise ValueError("refusing to write an empty report")
        for row in self.rows:
            if not 0.0 <= row[3] <= 1.0:
                raise ValueError(f"report value {row} outside [0, 1]")
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "MetricReport":
        rep = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                rep.add(row["model"], row["embedding"], row["metric"], float(row["value"]))
        return rep
