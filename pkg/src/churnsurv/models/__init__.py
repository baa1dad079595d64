"""Estimators: mean baseline, elastic net, L1 logistic regression, MLPs, bifurcating model."""
from .baselines import ElasticNetModel, LogisticModel, MeanModel, NotFittedError
from .bifurcating import (BifurcatingModel, BMConfig, EstimateDistribution, MCEstimates,
                          UnknownContextError)
from .mlp import MLPModel

__all__ = [
    "BMConfig", "BifurcatingModel", "ElasticNetModel", "EstimateDistribution",
    "LogisticModel", "MCEstimates", "MLPModel", "MeanModel", "NotFittedError",
    "UnknownContextError",
]
