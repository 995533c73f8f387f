"""Corpus BLEU, sentence chrF++, and paired significance tests."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr


@dataclass
class EvalConfig:
    case_sensitive: bool = False
    bleu_order: int = 4
    char_order: int = 6
    word_order: int = 2
    beta: float = 2.0
    bootstrap_samples: int = 1000
    alpha: float = 0.05

    def __post_init__(self) -> None:
        if self.bleu_order < 1 or self.char_order < 1 or self.word_order < 0:
            raise ValueError("n-gram orders must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.bootstrap_samples < 100:
            raise ValueError("need at least 100 bootstrap samples")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "EvalConfig":
        return cls(case_sensitive=task != "amr-gen", **overrides)


def _norm(text: str, cfg: EvalConfig) -> str:
    return text if cfg.case_sensitive else text.lower()


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# --- BLEU ---------------------------------------------------------------------


@dataclass
class BleuScore:
    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_len: int
    ref_len: int


def bleu_stats(hyp: str, ref: str, cfg: EvalConfig) -> np.ndarray:
    """Per-sentence sufficient statistics: [hyp_len, ref_len, match_1, total_1, ..., match_N, total_N]."""
    h = _norm(hyp, cfg).split()
    r = _norm(ref, cfg).split()
    row = [len(h), len(r)]
    for n in range(1, cfg.bleu_order + 1):
        hc, rc = _ngrams(h, n), _ngrams(r, n)
        row.append(sum((hc & rc).values()))
        row.append(max(len(h) - n + 1, 0))
    return np.asarray(row, dtype=np.int64)


def bleu_from_stats(stats: np.ndarray, order: int) -> BleuScore:
    hyp_len, ref_len = int(stats[0]), int(stats[1])
    precisions = []
    for n in range(order):
        match, total = stats[2 + 2 * n], stats[3 + 2 * n]
        precisions.append(match / total if total > 0 else 0.0)
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)
    if min(precisions) <= 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / order)
    return BleuScore(score, precisions, bp, hyp_len, ref_len)


def bleu(hypotheses: Sequence[str], references: Sequence[str], cfg: EvalConfig | None = None) -> BleuScore:
    """Corpus BLEU on whitespace tokens, no smoothing."""
    cfg = cfg or EvalConfig()
    if not hypotheses:
        raise ValueError("no hypotheses to score")
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    total = np.sum([bleu_stats(h, r, cfg) for h, r in zip(hypotheses, references)], axis=0)
    return bleu_from_stats(total, cfg.bleu_order)


# --- chrF++ -------------------------------------------------------------------


def chrf_pp(hypothesis: str, reference: str, cfg: EvalConfig | None = None) -> float:
    """Sentence chrF++: character 1..6-grams (whitespace removed) plus word 1..2-grams.

    Precision and recall are averaged over every order where either side has
    an n-gram, then combined as an F-beta score.
    """
    cfg = cfg or EvalConfig()
    if not reference.strip():
        raise ValueError("empty reference")
    hyp = _norm(hypothesis, cfg)
    ref = _norm(reference, cfg)
    h_chars = "".join(hyp.split())
    r_chars = "".join(ref.split())
    pairs = [(_ngrams(h_chars, n), _ngrams(r_chars, n)) for n in range(1, cfg.char_order + 1)]
    h_words, r_words = hyp.split(), ref.split()
    pairs += [(_ngrams(h_words, n), _ngrams(r_words, n)) for n in range(1, cfg.word_order + 1)]
    precs, recs = [], []
    for hc, rc in pairs:
        nh, nr = sum(hc.values()), sum(rc.values())
        if nh == 0 and nr == 0:
            continue
        match = sum((hc & rc).values())
        precs.append(match / nh if nh else 0.0)
        recs.append(match / nr if nr else 0.0)
    p = sum(precs) / len(precs)
    r = sum(recs) / len(recs)
    if p + r == 0:
        return 0.0
    b2 = cfg.beta**2
    return 100.0 * (1 + b2) * p * r / (b2 * p + r)


# --- significance -------------------------------------------------------------


def bootstrap_significance(
    sys_a: Sequence[str],
    sys_b: Sequence[str],
    references: Sequence[str],
    cfg: EvalConfig | None = None,
    seed: int = 0,
) -> float:
    """One-sided p-value for "A has higher corpus BLEU than B" by paired bootstrap.

    Fraction of resampled test sets on which BLEU(A) <= BLEU(B).  Identical
    systems therefore give 1.0.
    """
    cfg = cfg or EvalConfig()
    if not (len(sys_a) == len(sys_b) == len(references)):
        raise ValueError("systems and references must have the same length")
    if not references:
        raise ValueError("empty test set")
    sa = np.stack([bleu_stats(h, r, cfg) for h, r in zip(sys_a, references)])
    sb = np.stack([bleu_stats(h, r, cfg) for h, r in zip(sys_b, references)])
    rng = np.random.default_rng(seed)
    n = len(references)
    worse = 0
    for _ in range(cfg.bootstrap_samples):
        idx = rng.integers(0, n, n)
        a = bleu_from_stats(sa[idx].sum(axis=0), cfg.bleu_order).score
        b = bleu_from_stats(sb[idx].sum(axis=0), cfg.bleu_order).score
        if a <= b:
            worse += 1
    return worse / cfg.bootstrap_samples


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_signed_rank(scores_a: Sequence[float], scores_b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired signed-rank test; returns ``(min(W+, W-), p)``.

    Zero differences are dropped and tied magnitudes share their average
    rank.  Below 20 non-zero pairs the p-value is exact (every sign
    assignment counted); otherwise a normal approximation with tie-corrected
    variance is used.
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired score lists must have the same length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2.0
    stat = min(w_plus, total - w_plus)
    if n < 20:
        doubled = np.rint(ranks * 2).astype(np.int64)
        top = int(doubled.sum())
        counts = np.zeros(top + 1, dtype=object)
        counts[0] = 1
        for r in doubled:
            shifted = np.zeros_like(counts)
            shifted[r:] = counts[: top + 1 - r]
            counts = counts + shifted
        s2 = int(round(stat * 2))
        w = np.arange(top + 1)
        extreme = np.minimum(w, top - w) <= s2
        p = float(sum(counts[extreme])) / float(2**n)
        return stat, min(1.0, p)
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = (w_plus - total / 2.0) / math.sqrt(var)
    p = 2.0 * float(ndtr(-abs(z)))
    return stat, min(1.0, p)
