"""Confidence scores for selective prediction.

Four kinds are supported: the raw image-text cosine (base), cosines against
an image- or text-modality proxy embedding, and a softmax-normalized
contrastive score over a candidate set of hard negatives or labels. Also
here: rule-based hard-negative generation by single-token substitution from
a flat lexicon, and the loader for offline negatives files.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    DuplicateId,
    EmptyCandidates,
    InvalidConfig,
    MissingFile,
    MissingImageEmbedding,
    ModalityMismatch,
    NonPositiveTemperature,
    NoSubstitutableToken,
    ParseError,
    ZeroVector,
)
from .retrieval import ProxyEmbedding
from .store import EvaluationItem


class ScoreKind(Enum):
    BASE = "base"
    IMAGE_PROXY = "iproxy"
    TEXT_PROXY = "tproxy"
    CONTRASTIVE_TEXT = "contrastive"


@dataclass(frozen=True)
class ScoreConfig:
    kind: ScoreKind = ScoreKind.BASE
    temperature: float = 0.01
    include_prediction_in_denominator: bool = True

    def __post_init__(self):
        if not (self.temperature > 0.0):
            raise NonPositiveTemperature(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class CandidateSet:
    """Aligned candidate texts and unit embeddings (the alternative set)."""

    texts: tuple[str, ...]
    embeddings: np.ndarray  # (m, d) float64

    def __post_init__(self):
        if len(self.texts) == 0:
            raise EmptyCandidates("candidate set is empty")
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.texts):
            raise DimMismatch(
                f"{len(self.texts)} texts vs embeddings shape {self.embeddings.shape}"
            )

    @classmethod
    def from_pairs(cls, pairs) -> "CandidateSet":
        pairs = list(pairs)
        if not pairs:
            raise EmptyCandidates("candidate set is empty")
        texts = tuple(text for text, _ in pairs)
        embeddings = np.stack([np.asarray(e, dtype=np.float64) for _, e in pairs])
        return cls(texts=texts, embeddings=embeddings)


@dataclass(frozen=True)
class ScoreRecord:
    item_id: str
    score: float
    kind: ScoreKind
    components: dict[str, float] | None = None  # candidate text -> softmax mass


def cosine(a, b) -> float:
    """Cosine similarity in float64, clipped into [-1, 1]."""
    av = np.asarray(a, dtype=np.float64).reshape(-1)
    bv = np.asarray(b, dtype=np.float64).reshape(-1)
    if av.size != bv.size:
        raise DimMismatch(f"dims differ: {av.size} vs {bv.size}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for the zero vector")
    return float(np.clip(np.dot(av, bv) / (na * nb), -1.0, 1.0))


def base_score(item: EvaluationItem) -> ScoreRecord:
    """Raw image-text cosine of the prediction."""
    if item.image_embedding is None:
        raise MissingImageEmbedding(f"item {item.id} has no image embedding")
    return ScoreRecord(
        item_id=item.id,
        score=cosine(item.image_embedding, item.prediction_embedding),
        kind=ScoreKind.BASE,
    )


def proxy_kind_for(proxy: ProxyEmbedding) -> ScoreKind:
    return ScoreKind.TEXT_PROXY if proxy.source_variant.proxy_is_text else ScoreKind.IMAGE_PROXY


def proxy_score(item: EvaluationItem, proxy: ProxyEmbedding,
                kind: ScoreKind | None = None) -> ScoreRecord:
    """Cosine between the proxy vector and the prediction embedding."""
    derived = proxy_kind_for(proxy)
    if kind is not None and kind != derived:
        raise ModalityMismatch(
            f"requested {kind.value} but proxy from {proxy.source_variant.value} is {derived.value}"
        )
    return ScoreRecord(
        item_id=item.id,
        score=cosine(proxy.vector, item.prediction_embedding),
        kind=derived,
    )


def contrastive_score(item: EvaluationItem, proxy: ProxyEmbedding,
                      candidates: CandidateSet, cfg: ScoreConfig) -> ScoreRecord:
    """Softmax mass of the prediction's proxy score over the candidate set.

    The denominator ranges over the candidates plus the prediction itself
    when include_prediction_in_denominator is set and the prediction text is
    not already a candidate. The numerator always uses the item's own
    prediction embedding.
    """
    if cfg.kind is not ScoreKind.CONTRASTIVE_TEXT:
        raise InvalidConfig(f"contrastive_score called with kind={cfg.kind.value}")
    if not (cfg.temperature > 0.0):
        raise NonPositiveTemperature(f"temperature must be > 0, got {cfg.temperature}")
    tau = cfg.temperature
    pred_sim = cosine(proxy.vector, item.prediction_embedding)
    norms = np.linalg.norm(candidates.embeddings, axis=1)
    if (norms == 0.0).any():
        raise ZeroVector("candidate embedding is the zero vector")
    sims = np.clip((candidates.embeddings @ proxy.vector) / norms, -1.0, 1.0)
    texts = list(candidates.texts)
    denom_sims = list(sims)
    # same text means same embedding, so the prediction's candidate slot
    # shares the numerator's float path (keeps the score <= 1 exactly)
    pred_slot = None
    for i, text in enumerate(texts):
        if text == item.prediction_text:
            denom_sims[i] = pred_sim
            if pred_slot is None:
                pred_slot = i
    if pred_slot is None and cfg.include_prediction_in_denominator:
        texts.append(item.prediction_text)
        denom_sims.append(pred_sim)
        pred_slot = len(texts) - 1
    logits = np.asarray(denom_sims, dtype=np.float64) / tau
    pred_logit = pred_sim / tau
    shift = max(float(logits.max()), pred_logit)
    masses = np.exp(logits - shift)
    z = float(masses.sum())
    components: dict[str, float] = {}
    for text, mass in zip(texts, masses):
        components[text] = components.get(text, 0.0) + float(mass) / z
    if pred_slot is not None:
        score = float(masses[pred_slot] / z)
    else:
        # raw form: prediction outside the denominator may exceed 1
        score = float(math.exp(pred_logit - shift) / z)
    return ScoreRecord(
        item_id=item.id,
        score=score,
        kind=ScoreKind.CONTRASTIVE_TEXT,
        components=components,
    )


# --- rule-based hard negatives ----------------------------------------------

# word-class priority applied when a lexicon file lists one surface form in
# several classes
_CLASS_PRIORITY = ("nouns", "verbs", "adjectives")


@dataclass(frozen=True)
class NegativeLexicon:
    nouns: frozenset[str]
    adjectives: frozenset[str]
    verbs: frozenset[str]

    @classmethod
    def from_sets(cls, nouns, adjectives=(), verbs=()) -> "NegativeLexicon":
        raw = {
            "nouns": {str(w).lower() for w in nouns},
            "adjectives": {str(w).lower() for w in adjectives},
            "verbs": {str(w).lower() for w in verbs},
        }
        taken: set[str] = set()
        cleaned: dict[str, set[str]] = {}
        for name in _CLASS_PRIORITY:
            cleaned[name] = raw[name] - taken
            taken |= cleaned[name]
        return cls(
            nouns=frozenset(cleaned["nouns"]),
            adjectives=frozenset(cleaned["adjectives"]),
            verbs=frozenset(cleaned["verbs"]),
        )

    @classmethod
    def from_file(cls, path) -> "NegativeLexicon":
        p = Path(path)
        if not p.is_file():
            raise MissingFile(str(p))
        try:
            raw = json.loads(p.read_text("utf-8"))
        except json.JSONDecodeError as e:
            raise ParseError(f"{p.name}: {e}") from e
        if not isinstance(raw, dict):
            raise ParseError(f"{p.name}: lexicon must be a JSON object")
        return cls.from_sets(
            nouns=raw.get("nouns", []),
            adjectives=raw.get("adjectives", []),
            verbs=raw.get("verbs", []),
        )

    def class_of(self, word: str) -> frozenset[str] | None:
        w = word.lower()
        if w in self.nouns:
            return self.nouns
        if w in self.verbs:
            return self.verbs
        if w in self.adjectives:
            return self.adjectives
        return None


def default_lexicon() -> NegativeLexicon:
    return NegativeLexicon.from_file(Path(__file__).parent / "data" / "default_lexicon.json")


def _split_surface(token: str) -> tuple[str, str, str]:
    """Split a whitespace token into (leading punct, core, trailing punct)."""
    start, end = 0, len(token)
    while start < end and not token[start].isalnum():
        start += 1
    while end > start and not token[end - 1].isalnum():
        end -= 1
    return token[:start], token[start:end], token[end:]


def _recase(replacement: str, original_core: str) -> str:
    if original_core and original_core[0].isupper():
        return replacement[0].upper() + replacement[1:]
    return replacement


def generate_negatives(caption: str, lexicon: NegativeLexicon, n: int, seed: int) -> list[str]:
    """Up to n distinct captions, each one token substitution away.

    A token is substitutable when its punctuation-stripped lowercase form
    appears in a lexicon class with at least one alternative; the replacement
    is drawn from that class, never reproduces the original token, and keeps
    the original leading capitalization. Deterministic for a fixed seed.
    """
    if n < 1:
        raise InvalidConfig(f"n must be positive, got {n}")
    surface = caption.split()
    if not surface:
        raise NoSubstitutableToken("caption has no tokens")
    options: list[tuple[int, str]] = []
    for pos, token in enumerate(surface):
        _, core, _ = _split_surface(token)
        if not core:
            continue
        word_class = lexicon.class_of(core)
        if word_class is None:
            continue
        for replacement in sorted(word_class - {core.lower()}):
            options.append((pos, replacement))
    if not options:
        raise NoSubstitutableToken(f"no caption token matches the lexicon: {caption!r}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(options))
    outputs: list[str] = []
    seen: set[str] = set()
    for idx in order:
        pos, replacement = options[idx]
        prefix, core, suffix = _split_surface(surface[pos])
        tokens = list(surface)
        tokens[pos] = prefix + _recase(replacement, core) + suffix
        negative = " ".join(tokens)
        if negative not in seen:
            seen.add(negative)
            outputs.append(negative)
        if len(outputs) == n:
            break
    return outputs


def derive_item_seed(seed: int, item_id: str) -> int:
    """Stable per-item seed so parallel scheduling cannot change outputs."""
    digest = hashlib.sha256(f"{seed}:{item_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def load_negatives(path) -> dict[str, list[str]]:
    """Read a negatives JSONL file ({"id": ..., "negatives": [...]}) into a map."""
    p = Path(path)
    if not p.is_file():
        raise MissingFile(str(p))
    out: dict[str, list[str]] = {}
    for lineno, line in enumerate(p.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(str(e), line=lineno) from e
        if not isinstance(rec, dict) or "id" not in rec or "negatives" not in rec:
            raise ParseError("record needs 'id' and 'negatives' fields", line=lineno)
        rid = str(rec["id"])
        if rid in out:
            raise DuplicateId(f"line {lineno}: duplicate id {rid!r}")
        negatives = rec["negatives"]
        if not isinstance(negatives, list):
            raise ParseError("'negatives' must be an array", line=lineno)
        out[rid] = [str(t) for t in negatives]
    return out
