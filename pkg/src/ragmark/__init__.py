"""Watermarking and statistical misuse auditing for image knowledge bases.

A defender embeds watermark images into their knowledge base before
contributing it to a retrieval-augmented generation service, then audits
suspect services with probe queries: the trigger part pulls the watermark
image back through retrieval, the instruction part coaxes the generator into
emitting the secret signature, and Welch-based hypothesis tests turn the
observed emission rate into a clean / uses-watermarked-data / inconclusive
decision.
"""

from .kb import (
    ImageRecord,
    KnowledgeBase,
    RetrievalResult,
    as_embedding,
    cosine_similarity,
    inject_watermarks,
    load_index,
    rank_of,
    retrieve_top_k,
    save_index,
)
from .corpus import ProbeQuery, WatermarkSpec, load_corpus, make_probe, save_corpus
from .verification import (
    AuditAggregate,
    TrialResult,
    aggregate_trials,
    compute_cgsr,
    compute_vsr,
    eval_match,
    normalize,
    simscore,
)
from .stats import (
    ReferenceDistribution,
    SequentialResult,
    SummaryStats,
    WelchResult,
    deployment_test,
    pca_project,
    roc_points,
    sequential_audit,
    t_tail,
    welch_test,
)

__version__ = "0.1.0"

__all__ = [
    "ImageRecord",
    "KnowledgeBase",
    "RetrievalResult",
    "as_embedding",
    "cosine_similarity",
    "inject_watermarks",
    "load_index",
    "rank_of",
    "retrieve_top_k",
    "save_index",
    "ProbeQuery",
    "WatermarkSpec",
    "load_corpus",
    "make_probe",
    "save_corpus",
    "AuditAggregate",
    "TrialResult",
    "aggregate_trials",
    "compute_cgsr",
    "compute_vsr",
    "eval_match",
    "normalize",
    "simscore",
    "ReferenceDistribution",
    "SequentialResult",
    "SummaryStats",
    "WelchResult",
    "deployment_test",
    "pca_project",
    "roc_points",
    "sequential_audit",
    "t_tail",
    "welch_test",
    "__version__",
]
