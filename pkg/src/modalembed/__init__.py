"""Self-supervised patient embeddings from paired-modality images.

The package trains a small feed-forward encoder with a contrastive
objective over patient triplets (an image, an augmented view of it,
and a paired second-modality image) and evaluates the frozen features
with cosine KNN, a linear probe, ranking AUC and 2-d PCA projections.
"""

from .config import RunConfig, resolve_config
from .data import (
    AugmentConfig,
    Dataset,
    SyntheticConfig,
    augment,
    generate_synthetic,
    load_dataset,
    make_batch,
    make_folds,
    save_dataset,
    synthesize_modality,
)
from .encoder import EncoderParams, backward, forward, init_params, load_params, save_params
from .evaluation import (
    KnnConfig,
    MetricsReport,
    auc,
    classification_metrics,
    knn_classify,
    linear_probe,
    pca_project2,
    t_test,
)
from .linalg import cosine_similarity, l2_normalize, seeded_rng
from .loss import (
    EmbeddingBatch,
    LossConfig,
    LossValue,
    batch_loss,
    batch_loss_gradient,
    negative_prob,
    patient_loss,
    positive_prob_modality,
    positive_prob_transform,
)
from .optim import AdamState, adam_step, lr_at
from .runner import run_cv, run_train, train_encoder

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AugmentConfig",
    "Dataset",
    "EmbeddingBatch",
    "EncoderParams",
    "KnnConfig",
    "LossConfig",
    "LossValue",
    "MetricsReport",
    "RunConfig",
    "SyntheticConfig",
    "adam_step",
    "auc",
    "augment",
    "backward",
    "batch_loss",
    "batch_loss_gradient",
    "classification_metrics",
    "cosine_similarity",
    "forward",
    "generate_synthetic",
    "init_params",
    "knn_classify",
    "l2_normalize",
    "linear_probe",
    "load_dataset",
    "load_params",
    "lr_at",
    "make_batch",
    "make_folds",
    "negative_prob",
    "patient_loss",
    "pca_project2",
    "positive_prob_modality",
    "positive_prob_transform",
    "resolve_config",
    "run_cv",
    "run_train",
    "save_dataset",
    "save_params",
    "seeded_rng",
    "synthesize_modality",
    "t_test",
    "train_encoder",
]
