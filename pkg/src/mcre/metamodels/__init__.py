"""Consensus meta-models: per-answer classifiers, a listwise ranker,
graph neural networks over answer graphs, and a question-only gating
baseline.  Every trained model maps one instance to a vector of per-answer
correctness probabilities; the consensus answer is the argmax.
"""

from .base import (
    PredictionVector,
    load_model,
    save_model,
    scores_to_softmax,
    select_answer,
    sigmoid,
)
from .gating import GatingModel
from .gnn import GatModel, GcnModel
from .linear import LogisticModel
from .mlp import MlpModel
from .ranker import RankingModel, ndcg_at_1
from .trees import GbdtClassifier, RandomForestClassifier, RegressionTree

MODEL_KINDS = ("logreg", "gbdt", "mlp", "rank", "gcn", "gat", "gating")

__all__ = [
    "GatModel",
    "GatingModel",
    "GbdtClassifier",
    "GcnModel",
    "LogisticModel",
    "MODEL_KINDS",
    "MlpModel",
    "PredictionVector",
    "RandomForestClassifier",
    "RankingModel",
    "RegressionTree",
    "load_model",
    "ndcg_at_1",
    "save_model",
    "scores_to_softmax",
    "select_answer",
    "sigmoid",
]
