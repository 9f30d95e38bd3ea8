"""Exact k-nearest-neighbor search and similarity-weighted proxy embeddings.

The index is a brute-force scan: similarities are float64 dot products
against the unit-norm store rows, so results are exact and reproducible
across runs and worker counts. Four variants are supported; the variant
fixes which store column the query scans and which column the proxy is
averaged from:

    variant  query embedding     scans   proxy averaged from
    i2tr     image               images  texts
    i2ir     image               images  images
    t2tr     text (prediction)   texts   texts
    t2ir     text (prediction)   texts   images

Proxy weights are the clipped similarities renormalized onto the simplex:
w_i = max(g_i, floor) / sum_j max(g_j, floor), falling back to uniform
weights when every clipped similarity is zero.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimMismatch, EmptySet, EngineError, InvalidConfig, ZeroVector
from .store import RetrievalSet, normalize_vector


class RetrievalVariant(Enum):
    I2TR = "i2tr"
    I2IR = "i2ir"
    T2TR = "t2tr"
    T2IR = "t2ir"

    @property
    def query_is_image(self) -> bool:
        return self in (RetrievalVariant.I2TR, RetrievalVariant.I2IR)

    @property
    def proxy_is_text(self) -> bool:
        return self in (RetrievalVariant.I2TR, RetrievalVariant.T2TR)


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 15
    variant: RetrievalVariant = RetrievalVariant.I2TR
    weight_floor: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise InvalidConfig(f"k must be positive, got {self.k}")
        if self.weight_floor < 0.0:
            raise InvalidConfig(f"weight_floor must be >= 0, got {self.weight_floor}")


@dataclass(frozen=True)
class NeighborhoodSet:
    indices: np.ndarray       # (k,) int64 store positions, similarity-descending
    similarities: np.ndarray  # (k,) float64 cosines against the scanned column
    weights: np.ndarray       # (k,) float64 on the simplex


@dataclass(frozen=True)
class ProxyEmbedding:
    vector: np.ndarray            # unit-norm float64
    source_variant: RetrievalVariant
    neighborhood: NeighborhoodSet
    pre_normalized: np.ndarray    # convex combination before renormalization


def _proximity_weights(similarities: np.ndarray, floor: float) -> np.ndarray:
    clipped = np.maximum(similarities, floor)
    total = clipped.sum()
    if total <= 0.0:
        return np.full(len(clipped), 1.0 / len(clipped))
    return clipped / total


def knn(query, retrieval_set: RetrievalSet, variant: RetrievalVariant, k: int,
        weight_floor: float = 0.0) -> NeighborhoodSet:
    """Exact top-k by cosine against the variant's scan column.

    Ties are broken by lower record index. k larger than the store is
    clamped; the caller can detect the clamp from len(indices).
    """
    if k < 1:
        raise InvalidConfig(f"k must be positive, got {k}")
    if len(retrieval_set) == 0:
        raise EmptySet("retrieval set is empty")
    q = normalize_vector(query, "query")
    if q.size != retrieval_set.dim:
        raise DimMismatch(f"query dim {q.size} != store dim {retrieval_set.dim}")
    matrix = retrieval_set.images64 if variant.query_is_image else retrieval_set.texts64
    sims = matrix @ q
    k = min(k, len(retrieval_set))
    # stable sort on the negated similarities keeps lower indices first on ties
    order = np.argsort(-sims, kind="stable")[:k]
    top = sims[order]
    return NeighborhoodSet(
        indices=order.astype(np.int64),
        similarities=top,
        weights=_proximity_weights(top, weight_floor),
    )


def proxy_embedding(query, retrieval_set: RetrievalSet, cfg: RetrievalConfig) -> ProxyEmbedding:
    """Similarity-weighted average of the proxy-modality neighbors, renormalized."""
    neighborhood = knn(query, retrieval_set, cfg.variant, cfg.k, cfg.weight_floor)
    source = retrieval_set.texts64 if cfg.variant.proxy_is_text else retrieval_set.images64
    pre = neighborhood.weights @ source[neighborhood.indices]
    norm = float(np.linalg.norm(pre))
    if norm == 0.0:
        raise ZeroVector("neighbors cancel out; proxy cannot be normalized")
    return ProxyEmbedding(
        vector=pre / norm,
        source_variant=cfg.variant,
        neighborhood=neighborhood,
        pre_normalized=pre,
    )


def batch_proxy(queries, retrieval_set: RetrievalSet, cfg: RetrievalConfig,
                workers: int = 1) -> list[ProxyEmbedding | EngineError]:
    """Map proxy_embedding over queries, preserving input order.

    Per-query failures do not abort the batch: slot i holds either the
    ProxyEmbedding or the EngineError raised for query i (the
    asyncio.gather(return_exceptions=True) convention).
    """
    def one(query):
        try:
            return proxy_embedding(query, retrieval_set, cfg)
        except EngineError as e:
            return e

    queries = list(queries)
    if workers <= 1 or len(queries) <= 1:
        return [one(q) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, queries))
