"""Selective-prediction evaluation: accept/reject decisions, risk-coverage
curves with AURC/AUGRC summaries, loss labeling, the end-to-end scoring
pipeline, and the per-group score-dispersion report.

Curve convention: items are ranked score-descending (ties by input order);
for every k in 1..n the curve has one point at coverage k/n with
risk = (losses among top-k)/k and generalized risk = (losses among top-k)/n.
AURC and AUGRC are the means of those risks over the n coverage levels.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import scoring, textmetrics
from .errors import (
    EmptyInput,
    EngineError,
    InvalidConfig,
    MissingCandidateEmbeddings,
    MissingIdf,
    MissingImageEmbedding,
    NonFiniteScore,
    UnmappedItem,
)
from .retrieval import RetrievalConfig, proxy_embedding
from .scoring import CandidateSet, ScoreConfig, ScoreKind, ScoreRecord
from .store import EvaluationItem, RetrievalSet
from .textmetrics import CaptionMetric, CaptionMetricConfig, IdfTable


@dataclass(frozen=True)
class LabeledScore:
    item_id: str
    score: float
    loss: int


@dataclass(frozen=True)
class SelectionDecision:
    item_id: str
    accepted: bool
    threshold: float


@dataclass(frozen=True)
class RiskCoveragePoint:
    coverage: float
    risk: float
    generalized_risk: float
    threshold: float


@dataclass(frozen=True)
class RiskCoverageCurve:
    points: tuple[RiskCoveragePoint, ...]
    aurc: float
    augrc: float
    n_items: int


def select(scores, threshold: float) -> list[SelectionDecision]:
    """Accept exactly the items whose score clears the threshold."""
    scores = list(scores)
    if not scores:
        raise EmptyInput("no scores to select over")
    return [
        SelectionDecision(item_id=s.item_id, accepted=s.score >= threshold, threshold=threshold)
        for s in scores
    ]


def risk_coverage_curve(scores) -> RiskCoverageCurve:
    """One point per achievable coverage level k/n, k = 1..n."""
    scores = list(scores)
    n = len(scores)
    if n == 0:
        raise EmptyInput("no scores to build a curve from")
    values = np.array([s.score for s in scores], dtype=np.float64)
    if not np.isfinite(values).all():
        bad = int(np.argmax(~np.isfinite(values)))
        raise NonFiniteScore(f"item {scores[bad].item_id} has non-finite score")
    losses = np.array([s.loss for s in scores], dtype=np.float64)
    order = np.argsort(-values, kind="stable")  # ties keep input order
    sorted_losses = losses[order]
    sorted_scores = values[order]
    cum = np.cumsum(sorted_losses)
    ks = np.arange(1, n + 1, dtype=np.float64)
    risks = cum / ks
    generalized = cum / n
    coverages = ks / n
    points = tuple(
        RiskCoveragePoint(
            coverage=float(coverages[i]),
            risk=float(risks[i]),
            generalized_risk=float(generalized[i]),
            threshold=float(sorted_scores[i]),
        )
        for i in range(n)
    )
    return RiskCoverageCurve(
        points=points,
        aurc=float(risks.mean()),
        augrc=float(generalized.mean()),
        n_items=n,
    )


def label_items(items, cfg: CaptionMetricConfig, idf: IdfTable | None = None) -> list[int]:
    """0/1 losses in item order: correct flag when present, caption metric
    threshold otherwise."""
    losses = []
    for item in items:
        losses.append(_label_one(item, cfg, idf))
    return losses


def _label_one(item: EvaluationItem, cfg: CaptionMetricConfig, idf: IdfTable | None) -> int:
    if item.correct is not None:
        return 0 if item.correct else 1
    if cfg.metric is CaptionMetric.CIDER_N and idf is None:
        raise MissingIdf("captioning items with cider need an IdfTable")
    return textmetrics.caption_loss(item.prediction_text, item.references, cfg, idf)


def build_corpus_idf(items, n: int) -> IdfTable | None:
    """IdfTable over the captioning items' reference groups; None without any."""
    groups = [item.references for item in items if item.references]
    if not groups:
        return None
    return textmetrics.build_idf(groups, n)


@dataclass(frozen=True)
class ItemResult:
    item_id: str
    record: ScoreRecord | None
    loss: int | None
    error: str | None


@dataclass
class PipelineResult:
    items: list[ItemResult]            # input order, one entry per item
    curve: RiskCoverageCurve
    excluded: int
    clamped: int
    labeled: list[LabeledScore] = field(default_factory=list)

    @property
    def records(self) -> list[ScoreRecord]:
        return [r.record for r in self.items if r.record is not None]


@dataclass(frozen=True)
class LexiconNegatives:
    """Regenerate rule-based negative texts per item (seed, id)-deterministically."""

    lexicon: scoring.NegativeLexicon
    n: int = 10
    seed: int = 0


@dataclass(frozen=True)
class FileNegatives:
    """Negative texts loaded from a negatives JSONL file, keyed by item id."""

    by_id: dict[str, list[str]]


def _resolve_candidates(item: EvaluationItem, negatives_source) -> CandidateSet:
    """The candidate set for contrastive scoring.

    The engine never runs a text encoder, so candidate embeddings must
    already live on the item. A lexicon or negatives-file source narrows the
    set to the named texts (embeddings looked up among the item's
    candidates); without one the item's candidates are used as-is.
    """
    available = item.candidate_map()
    if not available:
        raise MissingCandidateEmbeddings(
            f"item {item.id} carries no embedded candidates; "
            "attach them (e.g. with the exporter) before contrastive scoring"
        )
    if negatives_source is None:
        return CandidateSet.from_pairs((t, e) for t, e in item.candidates)
    if isinstance(negatives_source, LexiconNegatives):
        texts = scoring.generate_negatives(
            item.prediction_text, negatives_source.lexicon,
            n=negatives_source.n,
            seed=scoring.derive_item_seed(negatives_source.seed, item.id),
        )
    elif isinstance(negatives_source, FileNegatives):
        texts = negatives_source.by_id.get(item.id, [])
    else:
        raise InvalidConfig(f"unsupported negatives source {type(negatives_source).__name__}")
    pairs = [(t, available[t]) for t in texts if t in available]
    chosen = {t for t, _ in pairs}
    if item.prediction_text in available and item.prediction_text not in chosen:
        pairs.insert(0, (item.prediction_text, available[item.prediction_text]))
    if len(pairs) <= (1 if item.prediction_text in available else 0):
        raise MissingCandidateEmbeddings(
            f"item {item.id}: none of the requested negative texts have embeddings"
        )
    return CandidateSet.from_pairs(pairs)


def _score_one(item: EvaluationItem, retrieval_set: RetrievalSet | None,
               retrieval_cfg: RetrievalConfig, score_cfg: ScoreConfig,
               negatives_source) -> tuple[ScoreRecord, bool]:
    """Score a single item; returns (record, k_was_clamped)."""
    kind = score_cfg.kind
    if kind is ScoreKind.BASE:
        return scoring.base_score(item), False
    if retrieval_set is None:
        raise InvalidConfig("proxy and contrastive scores need a retrieval set")
    if retrieval_cfg.variant.query_is_image:
        if item.image_embedding is None:
            raise MissingImageEmbedding(f"item {item.id} has no image embedding")
        query = item.image_embedding
    else:
        query = item.prediction_embedding
    proxy = proxy_embedding(query, retrieval_set, retrieval_cfg)
    clamped = len(proxy.neighborhood.indices) < retrieval_cfg.k
    if kind in (ScoreKind.IMAGE_PROXY, ScoreKind.TEXT_PROXY):
        return scoring.proxy_score(item, proxy, kind), clamped
    candidates = _resolve_candidates(item, negatives_source)
    return scoring.contrastive_score(item, proxy, candidates, score_cfg), clamped


def run_pipeline(items, retrieval_set: RetrievalSet | None,
                 retrieval_cfg: RetrievalConfig | None = None,
                 score_cfg: ScoreConfig | None = None,
                 metric_cfg: CaptionMetricConfig | None = None,
                 negatives_source=None,
                 workers: int = 1) -> PipelineResult:
    """Score every item, label losses, and build the risk-coverage curve.

    Structural problems (store/config) abort; per-item failures are recorded
    with an error flag and excluded from the curve, never silently dropped.
    Item order is preserved in the results.
    """
    items = list(items)
    retrieval_cfg = retrieval_cfg or RetrievalConfig()
    score_cfg = score_cfg or ScoreConfig()
    metric_cfg = metric_cfg or CaptionMetricConfig()
    idf = None
    if metric_cfg.metric is CaptionMetric.CIDER_N:
        idf = build_corpus_idf(items, metric_cfg.n)

    def score_one(item):
        try:
            return _score_one(item, retrieval_set, retrieval_cfg, score_cfg, negatives_source)
        except EngineError as e:
            return e

    if workers <= 1 or len(items) <= 1:
        raw = [score_one(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(score_one, items))

    results: list[ItemResult] = []
    labeled: list[LabeledScore] = []
    clamped = 0
    for item, outcome in zip(items, raw):
        if isinstance(outcome, EngineError):
            results.append(ItemResult(item.id, None, None, f"{type(outcome).__name__}: {outcome}"))
            continue
        record, was_clamped = outcome
        clamped += int(was_clamped)
        try:
            loss = _label_one(item, metric_cfg, idf)
        except EngineError as e:
            results.append(ItemResult(item.id, record, None, f"{type(e).__name__}: {e}"))
            continue
        results.append(ItemResult(item.id, record, loss, None))
        labeled.append(LabeledScore(item_id=item.id, score=record.score, loss=loss))

    if not labeled:
        raise EmptyInput("no items survived scoring and labeling")
    curve = risk_coverage_curve(labeled)
    excluded = sum(1 for r in results if r.error is not None)
    return PipelineResult(items=results, curve=curve, excluded=excluded,
                          clamped=clamped, labeled=labeled)


@dataclass(frozen=True)
class GroupDispersion:
    label: str
    mean: float
    std: float  # population standard deviation
    count: int


def dispersion_report(scores, groups: dict[str, str]) -> list[GroupDispersion]:
    """Per-group score mean and population std, sorted by group label."""
    by_group: dict[str, list[float]] = {}
    for s in scores:
        if s.item_id not in groups:
            raise UnmappedItem(f"item {s.item_id} has no group label")
        by_group.setdefault(groups[s.item_id], []).append(s.score)
    report = []
    for label in sorted(by_group):
        values = np.asarray(by_group[label], dtype=np.float64)
        report.append(
            GroupDispersion(
                label=label,
                mean=float(values.mean()),
                std=float(values.std()),
                count=len(values),
            )
        )
    return report
