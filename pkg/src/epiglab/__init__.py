"""Semi-supervised Bayesian active learning over precomputed embeddings.

Lightweight stochastic prediction heads (random forests, dropout networks,
deep ensembles, Laplace-approximated networks) are trained on actively
acquired labels. Acquisition can target information about the head
parameters (BALD), about predictions on a target distribution (EPIG), or
coverage of the embedding space; a labelling server supports a human oracle.
"""

from .acquisition import (
    ProbCoverConfig,
    bald_scores,
    entropy,
    epig_scores,
    kcentre_select,
    kmeans_select,
    max_entropy_scores,
    probcover_select,
    probcover_tune_radius,
    random_select,
    select_top,
    typiclust_select,
)
from .data import (
    UNKNOWN,
    AssetStore,
    EmbeddingTable,
    LabelVector,
    SplitSpec,
    SyntheticSpec,
    TaskSpec,
    apply_task,
    load_embeddings,
    load_labels,
    make_synthetic,
    split,
    stratified_init,
    write_embeddings,
    write_labels,
)
from .decompose import Decomposition, decompose, size_contrast
from .heads import (
    HeadConfig,
    TrainSettings,
    fit,
    gradient_check,
    marginal_predictive,
    predict_members,
)
from .loop import (
    ActiveLearningLoop,
    CurveSummary,
    DataBundle,
    LoopConfig,
    RunRecord,
    aggregate,
    class_histogram,
    evaluate,
    null_clock,
    run,
    step_timing,
)

__version__ = "0.1.0"

__all__ = [
    "UNKNOWN",
    "ActiveLearningLoop",
    "AssetStore",
    "CurveSummary",
    "DataBundle",
    "Decomposition",
    "EmbeddingTable",
    "HeadConfig",
    "LabelVector",
    "LoopConfig",
    "ProbCoverConfig",
    "RunRecord",
    "SplitSpec",
    "SyntheticSpec",
    "TaskSpec",
    "TrainSettings",
    "aggregate",
    "apply_task",
    "bald_scores",
    "class_histogram",
    "decompose",
    "entropy",
    "epig_scores",
    "evaluate",
    "fit",
    "gradient_check",
    "kcentre_select",
    "kmeans_select",
    "load_embeddings",
    "load_labels",
    "make_synthetic",
    "marginal_predictive",
    "max_entropy_scores",
    "null_clock",
    "predict_members",
    "probcover_select",
    "probcover_tune_radius",
    "random_select",
    "run",
    "select_top",
    "size_contrast",
    "split",
    "step_timing",
    "stratified_init",
    "typiclust_select",
    "write_embeddings",
    "write_labels",
]
