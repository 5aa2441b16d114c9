"""Clusterwise linear regression with learned label prediction."""

__version__ = "0.1.0"

from .base_regressors import Dataset, LinearModel, RegressorSpec, fit_linear, mse, predict_linear, r2
from .classifiers import ClassifierSpec, fit_classifier, nearest_centroid_predictor
from .data_io import PreprocessRecipe, SyntheticSpec, builtin_recipe, generate_synthetic, load_builtin, load_csv
from .eval_harness import CvPlan, EvalReport, GridSpec, cross_validate, emit_report, grid_search, oracle_label_experiment
from .hard_clr import ClusterwiseModel, ConstraintSet, HardClrConfig, Partition, clr_objective, fit_hard_clr
from .predictors import ClrPredictor, EnsemblePredictor, MethodConfig, PredictionStrategy, fit_method
from .soft_clr import MixtureParams, SoftAssignment, fit_soft_clr, to_clusterwise

__all__ = [
    "ClassifierSpec", "ClrPredictor", "ClusterwiseModel", "ConstraintSet", "CvPlan", "Dataset",
    "EnsemblePredictor", "EvalReport", "GridSpec", "HardClrConfig", "LinearModel", "MethodConfig",
    "MixtureParams", "Partition", "PredictionStrategy", "PreprocessRecipe", "RegressorSpec",
    "SoftAssignment", "SyntheticSpec", "builtin_recipe", "clr_objective", "cross_validate", "emit_report",
    "fit_classifier", "fit_hard_clr", "fit_linear", "fit_method", "fit_soft_clr", "generate_synthetic",
    "grid_search", "load_builtin", "load_csv", "mse", "nearest_centroid_predictor", "oracle_label_experiment",
    "predict_linear", "r2", "to_clusterwise",
]
