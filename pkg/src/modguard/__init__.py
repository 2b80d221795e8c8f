"""Two-stage multimodal harmful-content detection toolkit.

Stage one turns text and images into one shared embedding space through
a pluggable backend; stage two trains cheap conventional classifiers on
those frozen vectors, transfers them zero-shot across modalities, and
serves them over CLI and HTTP.
"""

from .classifiers import (
    ClassifierModel,
    Prediction,
    TrainConfig,
    decision_scores,
    load_model,
    predict,
    predict_labels,
    save_model,
    train_knn,
    train_logistic,
    train_svm,
    update_incremental,
)
from .corpus import Corpus, LabeledExample, SplitSpec, load_corpus, save_corpus, split
from .embedding import (
    EmbeddingStore,
    MockBackend,
    embed_images,
    embed_texts,
    get_backend,
    normalize,
    read_store,
    write_store,
)
from .metrics import EvaluationReport, confusion, evaluate, prf1, roc_auc
from .projection import Projection, ProjectionConfig, pca, trustworthiness, umap
from .textprep import clean_text

__version__ = "0.1.0"

__all__ = [
    "ClassifierModel",
    "Corpus",
    "EmbeddingStore",
    "EvaluationReport",
    "LabeledExample",
    "MockBackend",
    "Prediction",
    "Projection",
    "ProjectionConfig",
    "SplitSpec",
    "TrainConfig",
    "clean_text",
    "confusion",
    "decision_scores",
    "embed_images",
    "embed_texts",
    "evaluate",
    "get_backend",
    "load_corpus",
    "load_model",
    "normalize",
    "pca",
    "predict",
    "predict_labels",
    "prf1",
    "read_store",
    "roc_auc",
    "save_corpus",
    "save_model",
    "split",
    "train_knn",
    "train_logistic",
    "train_svm",
    "trustworthiness",
    "umap",
    "update_incremental",
    "write_store",
]
