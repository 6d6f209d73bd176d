from .cv import ENSEMBLE, LEARNER_ORDER, CvResult, CvSettings, FoldState, fit_partition, kfold_split, run_cv
from .ensemble import EnsembleWeights, fit_ensemble_weights, kkt_residual
from .metrics import MetricSet, compute_metrics
from .shapley import EXACT, SAMPLED, ShapleyAttribution, shapley_importance

__all__ = [
    "ENSEMBLE", "LEARNER_ORDER", "CvResult", "CvSettings", "FoldState", "fit_partition", "kfold_split", "run_cv",
    "EnsembleWeights", "fit_ensemble_weights", "kkt_residual",
    "MetricSet", "compute_metrics",
    "EXACT", "SAMPLED", "ShapleyAttribution", "shapley_importance",
]
