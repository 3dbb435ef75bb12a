"""Latent Dirichlet allocation with side-information priors.

Three priors over per-document topic proportions are provided: a fixed
Dirichlet (``lda``, optionally fitted as ``lda-opt``), a log-linear map of
side features (``dmr``), and a two-layer network (``nnlda``).
"""

from .corpus import Corpus, SyntheticConfig, generate_synthetic, ingest_csv, split
from .evaluation import (
    classify_ratings, elbo_ratio_report, generate_comment, grouping_metrics, log_perplexity,
)
from .inference import compute_elbo, infer, train, warm_start_neural
from .model import TopicModel, TrainConfig, load_model, save_model

__all__ = [
    "Corpus", "SyntheticConfig", "generate_synthetic", "ingest_csv", "split",
    "classify_ratings", "elbo_ratio_report", "generate_comment", "grouping_metrics",
    "log_perplexity", "compute_elbo", "infer", "train", "warm_start_neural",
    "TopicModel", "TrainConfig", "load_model", "save_model",
]
__version__ = "0.1.0"
