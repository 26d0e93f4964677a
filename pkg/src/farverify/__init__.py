"""Far-field speaker verification evaluation and pseudo-labeling toolkit.

Scores trial lists from precomputed speaker embeddings, computes EER and
the normalized minimum detection cost with condition-stratified reports,
generates multi-condition trial protocols from utterance metadata, and
runs a K-means + within-cluster-cosine elbow pseudo-labeling loop,
validated end to end on a built-in synthetic embedding corpus.
"""

from . import errors
from .corpus import (
    Channel,
    Distance,
    Domain,
    Embedding,
    EmbeddingSet,
    Gender,
    Manifest,
    NONTARGET,
    ScoreRecord,
    TARGET,
    TrialPair,
    UtteranceMeta,
    cosine,
    derive_tags,
    l2_normalize,
    load_embeddings,
    load_manifest,
    load_scores,
    load_trials,
    parse_embeddings,
    parse_manifest,
    parse_scores,
    parse_trials,
    save_embeddings,
    save_manifest,
    save_scores,
    save_trials,
)
from .metrics import (
    DcfParams,
    DetCurve,
    MetricsReport,
    StratumMetrics,
    det_curve,
    eer,
    min_dcf,
    min_dcf_detail,
    score_trials,
    stratified_report,
)
from .clustering import (
    ClusterModel,
    ElbowResult,
    PseudoLabels,
    RefineRound,
    SweepResult,
    assign_pseudo_labels,
    detect_elbow,
    kmeans,
    nmi,
    refine_loop,
    sweep,
    wccs,
)
from .trials import (
    ProtocolStats,
    TrialConfig,
    generate_trials,
    generate_with_stats,
    protocol_stats,
    validate_trials,
)
from .synth import SynthConfig, SynthCorpus, gen_corpus, oracle_refresher

__version__ = "0.1.0"

__all__ = [
    "errors",
    # corpus
    "Channel", "Distance", "Domain", "Embedding", "EmbeddingSet", "Gender",
    "Manifest", "NONTARGET", "ScoreRecord", "TARGET", "TrialPair",
    "UtteranceMeta", "cosine", "derive_tags", "l2_normalize",
    "load_embeddings", "load_manifest", "load_scores", "load_trials",
    "parse_embeddings", "parse_manifest", "parse_scores", "parse_trials",
    "save_embeddings", "save_manifest", "save_scores", "save_trials",
    # metrics
    "DcfParams", "DetCurve", "MetricsReport", "StratumMetrics", "det_curve",
    "eer", "min_dcf", "min_dcf_detail", "score_trials", "stratified_report",
    # clustering
    "ClusterModel", "ElbowResult", "PseudoLabels", "RefineRound",
    "SweepResult", "assign_pseudo_labels", "detect_elbow", "kmeans", "nmi",
    "refine_loop", "sweep", "wccs",
    # trials
    "ProtocolStats", "TrialConfig", "generate_trials", "generate_with_stats",
    "protocol_stats", "validate_trials",
    # synth
    "SynthConfig", "SynthCorpus", "gen_corpus", "oracle_refresher",
]
