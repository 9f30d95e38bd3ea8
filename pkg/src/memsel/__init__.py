"""Memory-augmented selective prediction over vision-language embeddings.

The engine consumes precomputed embeddings only: a retrieval store of
image-caption pairs, evaluation items with predicted text, and (optionally)
embedded candidate sets. It computes confidence scores (raw cosine, proxy
cosine, contrastive softmax) and evaluates the induced accept/reject policy
with risk-coverage curves, AURC, and AUGRC.
"""

from .errors import EngineError
from .evaluation import (
    FileNegatives,
    GroupDispersion,
    ItemResult,
    LabeledScore,
    LexiconNegatives,
    PipelineResult,
    RiskCoverageCurve,
    RiskCoveragePoint,
    SelectionDecision,
    dispersion_report,
    label_items,
    risk_coverage_curve,
    run_pipeline,
    select,
)
from .retrieval import (
    NeighborhoodSet,
    ProxyEmbedding,
    RetrievalConfig,
    RetrievalVariant,
    batch_proxy,
    knn,
    proxy_embedding,
)
from .scoring import (
    CandidateSet,
    NegativeLexicon,
    ScoreConfig,
    ScoreKind,
    ScoreRecord,
    base_score,
    contrastive_score,
    cosine,
    default_lexicon,
    generate_negatives,
    load_negatives,
    proxy_score,
)
from .store import (
    EvaluationItem,
    RetrievalRecord,
    RetrievalSet,
    StoreManifest,
    load_evaluation_items,
    load_retrieval_set,
    save_evaluation_items,
    save_retrieval_set,
)
from .synth import (
    ConceptSpec,
    ConceptStatistics,
    World,
    WorldConfig,
    generate_world,
    random_concepts,
    world_statistics,
)
from .textmetrics import (
    CaptionMetric,
    CaptionMetricConfig,
    IdfTable,
    build_idf,
    caption_loss,
    cider_n,
    meteor_lite,
    tokenize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
