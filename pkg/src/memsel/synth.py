"""Deterministic synthetic embedding worlds for desk-scale evaluation.

Each concept is a unit center on the sphere; image and text samples are
Gaussian perturbations of the center, renormalized. image_noise/text_noise
set the per-modality spread (representation instability) and scale_bias
compresses or inflates a concept's whole region (region-dependent
calibration), so tests can reproduce both failure modes the engine is
meant to mitigate.

Evaluation items are classification-style by default (correct flag);
caption_mode emits reference captions instead so losses flow through the
caption metrics. Every generated id appears in the groups map, retrieval
records included.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidConfig
from .store import EvaluationItem, RetrievalSet


RECORD_TEMPLATES = (
    "a photo of a {}",
    "an image of a {}",
    "a picture showing a {}",
    "a snapshot of a {}",
)
REFERENCE_TEMPLATES = ("a photo of a {}", "an image of a {}")


@dataclass(frozen=True)
class ConceptSpec:
    id: str
    center: np.ndarray
    image_noise: float
    text_noise: float
    scale_bias: float = 1.0

    def __post_init__(self):
        if self.image_noise <= 0 or self.text_noise <= 0:
            raise InvalidConfig(f"concept {self.id}: noise parameters must be > 0")
        if self.scale_bias <= 0:
            raise InvalidConfig(f"concept {self.id}: scale_bias must be > 0")
        norm = float(np.linalg.norm(self.center))
        if abs(norm - 1.0) > 1e-6:
            raise InvalidConfig(f"concept {self.id}: center norm {norm:.6f} is not 1")


@dataclass(frozen=True)
class WorldConfig:
    dim: int
    concepts: tuple[ConceptSpec, ...]
    retrieval_per_concept: int
    eval_per_concept: int
    wrong_caption_rate: float
    seed: int
    caption_mode: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidConfig(f"dim must be positive, got {self.dim}")
        if len(self.concepts) < 2:
            raise InvalidConfig("need at least 2 concepts so wrong captions exist")
        if self.retrieval_per_concept < 1 or self.eval_per_concept < 1:
            raise InvalidConfig("per-concept counts must be >= 1")
        if not (0.0 <= self.wrong_caption_rate <= 1.0):
            raise InvalidConfig(f"wrong_caption_rate must lie in [0, 1], got {self.wrong_caption_rate}")
        for c in self.concepts:
            if c.center.size != self.dim:
                raise InvalidConfig(f"concept {c.id}: center dim {c.center.size} != {self.dim}")


class World(NamedTuple):
    retrieval_set: RetrievalSet
    items: list[EvaluationItem]
    groups: dict[str, str]


def _unit(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


def _sample(rng, concept: ConceptSpec, noise: float, dim: int) -> np.ndarray:
    return _unit(concept.center + noise * concept.scale_bias * rng.standard_normal(dim))


def random_concepts(dim: int, count: int, seed: int, image_noise: float = 0.2,
                    text_noise: float = 0.2, scale_biases=None) -> tuple[ConceptSpec, ...]:
    """Concepts with random unit centers; scale_biases cycles over concepts."""
    rng = np.random.default_rng(seed)
    biases = list(scale_biases) if scale_biases else [1.0]
    concepts = []
    for i in range(count):
        center = _unit(rng.standard_normal(dim))
        concepts.append(
            ConceptSpec(
                id=f"concept-{i:02d}",
                center=center,
                image_noise=image_noise,
                text_noise=text_noise,
                scale_bias=float(biases[i % len(biases)]),
            )
        )
    return tuple(concepts)


def generate_world(cfg: WorldConfig) -> World:
    """Sample a retrieval set, evaluation items, and the id-to-concept map.

    Deterministic for a fixed seed: one RNG stream drives generation in a
    fixed concept/record/item order.
    """
    rng = np.random.default_rng(cfg.seed)
    groups: dict[str, str] = {}

    ids, captions, images, texts = [], [], [], []
    for concept in cfg.concepts:
        for i in range(cfg.retrieval_per_concept):
            rid = f"r-{concept.id}-{i:04d}"
            ids.append(rid)
            captions.append(RECORD_TEMPLATES[i % len(RECORD_TEMPLATES)].format(concept.id))
            images.append(_sample(rng, concept, concept.image_noise, cfg.dim))
            texts.append(_sample(rng, concept, concept.text_noise, cfg.dim))
            groups[rid] = concept.id
    retrieval_set = RetrievalSet.from_arrays(
        ids, captions, np.asarray(images), np.asarray(texts), normalized=False
    )

    items: list[EvaluationItem] = []
    concept_list = list(cfg.concepts)
    for ci, concept in enumerate(concept_list):
        for i in range(cfg.eval_per_concept):
            item_id = f"e-{concept.id}-{i:04d}"
            image = _sample(rng, concept, concept.image_noise, cfg.dim)
            wrong = bool(rng.random() < cfg.wrong_caption_rate)
            if wrong:
                # draw the predicted concept uniformly among the others
                offset = 1 + int(rng.integers(len(concept_list) - 1))
                predicted = concept_list[(ci + offset) % len(concept_list)]
            else:
                predicted = concept
            template = RECORD_TEMPLATES[int(rng.integers(len(RECORD_TEMPLATES)))]
            prediction_text = template.format(predicted.id)
            prediction = _sample(rng, predicted, predicted.text_noise, cfg.dim)
            # one candidate per concept, rendered with the item's template;
            # the predicted concept's candidate reuses the prediction embedding
            # so identical texts carry identical embeddings
            candidates = []
            for other in concept_list:
                text = template.format(other.id)
                emb = prediction if other is predicted else _sample(rng, other, other.text_noise, cfg.dim)
                candidates.append((text, emb))
            if cfg.caption_mode:
                references = tuple(t.format(concept.id) for t in REFERENCE_TEMPLATES)
                correct = None
            else:
                references = ()
                correct = not wrong
            items.append(
                EvaluationItem(
                    id=item_id,
                    prediction_text=prediction_text,
                    prediction_embedding=prediction,
                    image_embedding=image,
                    references=references,
                    correct=correct,
                    candidates=tuple(candidates),
                )
            )
            groups[item_id] = concept.id
    return World(retrieval_set=retrieval_set, items=items, groups=groups)


@dataclass(frozen=True)
class ConceptStatistics:
    image_std: float
    text_std: float
    mean_pairwise_cosine: float


def _rms_deviation(arr: np.ndarray) -> float:
    if len(arr) < 2:
        return 0.0
    mean = arr.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum((arr - mean) ** 2, axis=1))))


def _mean_pairwise_cosine(arr: np.ndarray) -> float:
    n = len(arr)
    if n < 2:
        return 1.0  # degenerate single-sample concept
    total = arr.sum(axis=0)
    gram_sum = float(total @ total) - float(np.sum(arr * arr))
    return gram_sum / (n * (n - 1))


def world_statistics(world: World) -> dict[str, ConceptStatistics]:
    """Per-concept spreads and within-concept image coherence, from the
    retrieval records."""
    rs = world.retrieval_set
    by_concept: dict[str, list[int]] = {}
    for i, rid in enumerate(rs.ids):
        by_concept.setdefault(world.groups[rid], []).append(i)
    stats = {}
    for concept_id in sorted(by_concept):
        rows = by_concept[concept_id]
        images = rs.images64[rows]
        texts = rs.texts64[rows]
        stats[concept_id] = ConceptStatistics(
            image_std=_rms_deviation(images),
            text_std=_rms_deviation(texts),
            mean_pairwise_cosine=_mean_pairwise_cosine(images),
        )
    return stats
