"""Clustering and classification evaluation."""

from .clustering import clustering_scores, kmeans, kmeans_pp_init, lloyd
from .folds import (CVResult, FoldPlan, LeakError, check_split, grouped_kfold, make_folds,
                    nested_cv, plan_folds, stratified_kfold)
from .metrics import ari, confusion_matrix, contingency, f1_scores, nmi
from .probe import (LinearProbe, combiner_probe, linear_probe, prediction_entropy,
                    train_probe)
from .report import Metrics, canonical_json, config_hash, write_json

__all__ = [
    "CVResult", "FoldPlan", "LeakError", "LinearProbe", "Metrics", "ari", "canonical_json",
    "check_split", "clustering_scores", "combiner_probe", "config_hash", "confusion_matrix",
    "contingency", "f1_scores", "grouped_kfold", "kmeans", "kmeans_pp_init", "linear_probe",
    "lloyd", "make_folds", "nested_cv", "nmi", "plan_folds", "prediction_entropy",
    "stratified_kfold", "train_probe", "write_json",
]
