"""Desk-scale adversarial text generation in sentence-embedding space."""

from .corpus import Corpus, SentenceTriple, TokenizedSentence, Vocabulary, build_vocab, tokenize
from .gan import GAN, GanConfig, gan_train, mode_coverage
from .metrics import MetricReport, bleu_n, meteor_lite, pearson, rouge, weighted_human_scores
from .ndtensor import Adam, Tensor, backward, grad
from .pipeline import ExperimentConfig, run_pipeline
from .skipthought import SkipThought, SkipThoughtConfig, greedy_decode, sample_decode, train_skipthought

__version__ = "0.1.0"
