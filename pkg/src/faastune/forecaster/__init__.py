"""Invocation forecasting: hybrid LSTM/MLP model with MC-dropout uncertainty,
plus last-value and AR(p) baselines."""

from .baselines import baseline_ar, baseline_last_value, fit_ar, smape
from .model import Forecast, ForecasterConfig, HybridForecaster

__all__ = [
    "Forecast",
    "ForecasterConfig",
    "HybridForecaster",
    "baseline_ar",
    "baseline_last_value",
    "fit_ar",
    "smape",
]
