"""Bayesian trial-level surrogacy models."""

from .config import ModelConfig, default_priors, read_model_config
from .kernel import CollapsedSurrogacyModel, SurrogacyData
from .models import (
    Prediction,
    SurrogacyFit,
    build_data,
    fit_dh,
    fit_model,
    fit_pnf,
    predict_final_effect,
    stream_key,
    write_parameter_csv,
)
from .verdict import SurrogacyVerdict, evaluate_surrogacy

__all__ = [
    "CollapsedSurrogacyModel",
    "ModelConfig",
    "Prediction",
    "SurrogacyData",
    "SurrogacyFit",
    "SurrogacyVerdict",
    "build_data",
    "default_priors",
    "evaluate_surrogacy",
    "fit_dh",
    "fit_model",
    "fit_pnf",
    "predict_final_effect",
    "read_model_config",
    "stream_key",
    "write_parameter_csv",
]
