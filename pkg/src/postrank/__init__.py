"""Multimodal topic-post quality ranking with evidence graphs, in plain numpy."""

from .metrics import RankedList, mean_average_precision, ndcg_at_k
from .model import FULL, VARIANTS, AblationMask, ModelConfig, ModelParams, init_params, score, score_batch

__version__ = "0.1.0"

__all__ = [
    "FULL",
    "VARIANTS",
    "AblationMask",
    "ModelConfig",
    "ModelParams",
    "RankedList",
    "init_params",
    "mean_average_precision",
    "ndcg_at_k",
    "score",
    "score_batch",
]
