"""Baseline regressors behind one fit/predict contract."""

from .base import Regressor, predict
from .elastic_net import ElasticNet, fit_elastic_net
from .svr import SVR, fit_svr_rbf
from .trees import GradientBoosting, RandomForest, fit_gradient_boosting, fit_random_forest

LEARNERS = {
    "elastic_net": ElasticNet,
    "random_forest": RandomForest,
    "gradient_boosting": GradientBoosting,
    "svr_rbf": SVR,
}

__all__ = [
    "LEARNERS",
    "ElasticNet",
    "GradientBoosting",
    "RandomForest",
    "Regressor",
    "SVR",
    "fit_elastic_net",
    "fit_gradient_boosting",
    "fit_random_forest",
    "fit_svr_rbf",
    "predict",
]
