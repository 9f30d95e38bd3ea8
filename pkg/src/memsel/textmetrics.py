"""Caption similarity metrics that back the 0/1 loss labels for captioning.

Two measures are provided: an idf-weighted n-gram cosine averaged over
n-gram orders (cider_n, normalized to [0, 1] with no x10 scaling and no
length penalty) and a simplified exact-match METEOR (meteor_lite, no
stemming or synonym table). Both consume the canonical tokenizer below, so
loss labels are deterministic functions of the raw strings.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum

from .errors import (
    EmptyCandidate,
    EmptyCorpus,
    EmptyReferences,
    InvalidConfig,
    MissingIdf,
)

# word tokens: unicode alphanumeric runs, underscore excluded
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

TokenSequence = list[str]
Ngram = tuple[str, ...]


class CaptionMetric(Enum):
    CIDER_N = "cider"
    METEOR_LITE = "meteor"


_DEFAULT_BETA = {CaptionMetric.CIDER_N: 0.6, CaptionMetric.METEOR_LITE: 0.24}


@dataclass(frozen=True)
class CaptionMetricConfig:
    metric: CaptionMetric = CaptionMetric.CIDER_N
    n: int = 4
    beta: float | None = None  # None -> per-metric default

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfig(f"n-gram order must be >= 1, got {self.n}")
        if self.beta is not None and not (0.0 <= self.beta <= 1.0):
            raise InvalidConfig(f"beta must lie in [0, 1], got {self.beta}")

    @property
    def resolved_beta(self) -> float:
        return _DEFAULT_BETA[self.metric] if self.beta is None else self.beta


@dataclass(frozen=True)
class IdfTable:
    """Corpus statistics for cider_n: idf = log(doc_count / df), df >= 1."""

    n: int
    doc_count: int
    idf: dict[Ngram, float]

    def lookup(self, gram: Ngram) -> float:
        # unseen grams take df = 1
        return self.idf.get(gram, math.log(self.doc_count))


def tokenize(text: str) -> TokenSequence:
    """Lowercased, punctuation-stripped, whitespace-split word tokens."""
    return _TOKEN_RE.findall(text.lower())


def ngrams(tokens: TokenSequence, k: int) -> list[Ngram]:
    return [tuple(tokens[i:i + k]) for i in range(len(tokens) - k + 1)]


def build_idf(reference_groups, n: int) -> IdfTable:
    """Document frequencies over reference groups (one group per item).

    A gram counts once per group that contains it in any reference.
    """
    groups = list(reference_groups)
    if not groups:
        raise EmptyCorpus("no reference groups")
    df: Counter = Counter()
    for group in groups:
        seen: set[Ngram] = set()
        for ref in group:
            toks = tokenize(ref)
            for k in range(1, n + 1):
                seen.update(ngrams(toks, k))
        df.update(seen)
    doc_count = len(groups)
    idf = {gram: math.log(doc_count / count) for gram, count in df.items()}
    return IdfTable(n=n, doc_count=doc_count, idf=idf)


def _weighted_counts(tokens: TokenSequence, k: int, idf: IdfTable) -> dict[Ngram, float]:
    counts = Counter(ngrams(tokens, k))
    return {g: c * idf.lookup(g) for g, c in counts.items()}


def _sparse_cosine(a: dict[Ngram, float], b: dict[Ngram, float]) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    return dot / (na * nb)


def cider_n(candidate: str, references, idf: IdfTable, n: int = 4) -> float:
    """Mean over orders 1..n of the idf-weighted k-gram cosine, averaged over
    references; clipped into [0, 1]."""
    cand = tokenize(candidate)
    if not cand:
        raise EmptyCandidate("candidate has no tokens")
    refs = [tokenize(r) for r in references]
    if not refs:
        raise EmptyReferences("no references")
    total = 0.0
    for k in range(1, n + 1):
        cand_vec = _weighted_counts(cand, k, idf)
        sim = 0.0
        for ref in refs:
            sim += _sparse_cosine(cand_vec, _weighted_counts(ref, k, idf))
        total += sim / len(refs)
    return min(1.0, max(0.0, total / n))


def _align(cand: TokenSequence, ref: TokenSequence) -> list[tuple[int, int]]:
    """Greedy exact-match alignment: each candidate token takes the earliest
    unused matching reference position."""
    used = [False] * len(ref)
    pairs = []
    for i, tok in enumerate(cand):
        for j, rtok in enumerate(ref):
            if not used[j] and rtok == tok:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def _chunks(pairs: list[tuple[int, int]]) -> int:
    count = 1
    for (ci, ri), (cj, rj) in zip(pairs, pairs[1:]):
        if cj != ci + 1 or rj != ri + 1:
            count += 1
    return count


def meteor_lite(candidate: str, references) -> float:
    """Exact-unigram METEOR: F_mean = 10PR/(R+9P), fragmentation penalty
    0.5*(chunks/matches)^3, maximum over references; 0 with no matches."""
    cand = tokenize(candidate)
    if not cand:
        raise EmptyCandidate("candidate has no tokens")
    refs = [tokenize(r) for r in references]
    if not refs:
        raise EmptyReferences("no references")
    best = 0.0
    for ref in refs:
        if not ref:
            continue
        pairs = _align(cand, ref)
        m = len(pairs)
        if m == 0:
            continue
        precision = m / len(cand)
        recall = m / len(ref)
        f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
        penalty = 0.5 * (_chunks(pairs) / m) ** 3
        best = max(best, f_mean * (1.0 - penalty))
    return best


def caption_metric(candidate: str, references, cfg: CaptionMetricConfig,
                   idf: IdfTable | None = None) -> float:
    if cfg.metric is CaptionMetric.CIDER_N:
        if idf is None:
            raise MissingIdf("cider_n needs an IdfTable")
        return cider_n(candidate, references, idf, cfg.n)
    return meteor_lite(candidate, references)


def caption_loss(candidate: str, references, cfg: CaptionMetricConfig,
                 idf: IdfTable | None = None) -> int:
    """0/1 loss: 1 when the similarity falls below beta (boundary counts as
    correct)."""
    value = caption_metric(candidate, references, cfg, idf)
    return 1 if value < cfg.resolved_beta else 0
