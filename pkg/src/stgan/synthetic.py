"""Seeded toy data: a phrase-grammar corpus and a ring of 2-D Gaussians."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

NAMES = """anna ben carla dev elena farid greta hugo iris jonas kira leo maya nils olga
pavel quinn rosa sami tara umar vera walt xena yuri zoe""".split()

NOUNS = """apple bag ball basket bell bench bird blanket boat book bottle bread bridge
bucket cake candle cap car carpet chair clock coat cup desk door dress drum egg
fence flag flower fork garden gate glass glove hat horse jar kettle key kite ladder
lamp letter map mirror nest note orange pan pencil phone piano pillow plate radio
ring rope scarf shell shoe sock spoon stone suitcase table teapot ticket towel toy
train tree umbrella vase wallet watch window anchor badge barrel blade bowl brush
button camera card chain coin comb crown diary envelope feather frame hammer helmet
jacket ladle lantern locket magnet medal needle paddle parcel puzzle quilt
saddle scissors sieve sled spade stamp statue sword thimble torch trophy trumpet
tray trunk violin wagon whistle""".split()

ADJECTIVES = """big small old new red blue green yellow heavy light warm cold bright dark
quiet loud soft hard clean dirty round square tall short long empty full broken
shiny wooden golden silver strange tiny huge pretty plain wet dry rusty dusty
striped spotted gentle fragile sturdy narrow wide smooth rough""".split()

VERBS = """found lost took carried dropped opened closed painted cleaned moved broke fixed
washed kept sold bought hid showed gave brought held pushed pulled wanted needed
saw liked left polished wrapped mended borrowed returned packed
counted stacked hung folded""".split()

PLACES = """kitchen garden station market park school library office bakery harbor
museum hotel street hallway attic cellar shop river beach forest barn chapel
harbour""".split()

ADVERBS = """slowly quickly quietly carefully again today later soon gladly suddenly
twice eagerly calmly proudly""".split()

PREPOSITIONS = """in near behind under beside""".split()


def _np(rng: np.random.Generator, cast: dict) -> list[str]:
    """A noun phrase, biased toward the document's recurring objects."""
    noun = cast["objects"][rng.integers(len(cast["objects"]))] if rng.random() < 0.6 else \
        NOUNS[rng.integers(len(NOUNS))]
    det = ["the", "a", "my", "her", "his"][rng.integers(5)]
    if rng.random() < 0.45:
        return [det, ADJECTIVES[rng.integers(len(ADJECTIVES))], noun]
    return [det, noun]


def _subject(rng, cast) -> list[str]:
    r = rng.random()
    if r < 0.55:
        return [cast["hero"]]
    if r < 0.75:
        return [["she", "he"][cast["pronoun"]]]
    return [NAMES[rng.integers(len(NAMES))]]


def _sentence(rng: np.random.Generator, cast: dict) -> list[str]:
    subj = _subject(rng, cast)
    verb = VERBS[rng.integers(len(VERBS))]
    form = rng.integers(5)
    if form == 0:
        body = subj + [verb] + _np(rng, cast)
    elif form == 1:
        body = subj + [verb] + _np(rng, cast) + [PREPOSITIONS[rng.integers(len(PREPOSITIONS))], "the",
                                                 cast["place"]]
    elif form == 2:
        body = subj + [verb] + _np(rng, cast) + [ADVERBS[rng.integers(len(ADVERBS))]]
    elif form == 3:
        body = ["at", "the", cast["place"], ","] + subj + [verb] + _np(rng, cast)
    else:
        body = subj + ["went", "to", "the", PLACES[rng.integers(len(PLACES))]]
    end = "?" if rng.random() < 0.1 else "."
    return body + [end]


def grammar_documents(n_sentences: int = 200, doc_len: int = 10, seed: int = 0,
                      min_len: int = 4, max_len: int = 12) -> list[list[str]]:
    """Documents of short sentences sharing a protagonist, place and objects."""
    rng = np.random.default_rng(seed)
    docs: list[list[str]] = []
    made = 0
    while made < n_sentences:
        cast = {
            "hero": NAMES[rng.integers(len(NAMES))],
            "pronoun": int(rng.integers(2)),
            "place": PLACES[rng.integers(len(PLACES))],
            "objects": [NOUNS[i] for i in rng.choice(len(NOUNS), size=3, replace=False)],
        }
        doc = []
        while len(doc) < min(doc_len, n_sentences - made):
            words = _sentence(rng, cast)
            if min_len <= len(words) <= max_len:
                doc.append(" ".join(words))
        docs.append(doc)
        made += len(doc)
    return docs


def write_grammar_corpus(path: str | Path, n_sentences: int = 200, seed: int = 0) -> Path:
    docs = grammar_documents(n_sentences, seed=seed)
    path = Path(path)
    path.write_text("\n\n".join("\n".join(d) for d in docs) + "\n", encoding="utf-8")
    return path


def vocabulary_size() -> int:
    words = set(NAMES + NOUNS + ADJECTIVES + VERBS + PLACES + ADVERBS + PREPOSITIONS)
    words.update(["the", "a", "my", "her", "his", "she", "he", "at", "went", "to", ",", ".", "?"])
    return len(words)


# ---------------------------------------------------------------------------
# 2-D Gaussian ring
# ---------------------------------------------------------------------------

def ring_centers(n_modes: int = 8, radius: float = 2.0) -> np.ndarray:
    angles = 2 * math.pi * np.arange(n_modes) / n_modes
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


def sample_ring(n: int, rng: np.random.Generator, n_modes: int = 8, radius: float = 2.0,
                std: float = 0.05) -> np.ndarray:
    centers = ring_centers(n_modes, radius)
    which = rng.integers(n_modes, size=n)
    return centers[which] + rng.normal(0.0, std, size=(n, 2))
