"""Euclidean and Poincaré-ball latent space recommenders."""
from hyperrec.data_models import ExperimentConfig, MetricsReport, ModelConfig, ModelKind, SpaceKind, SpaceTag
from hyperrec.errors import HyperRecError
from hyperrec.evaluation import Evaluator
from hyperrec.models import LatentRecommender
from hyperrec.training_pipeline import Trainer

__all__ = [
    'Evaluator',
    'ExperimentConfig',
    'HyperRecError',
    'LatentRecommender',
    'MetricsReport',
    'ModelConfig',
    'ModelKind',
    'SpaceKind',
    'SpaceTag',
    'Trainer',
]
