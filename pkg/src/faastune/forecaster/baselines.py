"""Reference predictors the hybrid model is benchmarked against, plus SMAPE."""

from __future__ import annotations

import numpy as np

__all__ = ["smape", "baseline_last_value", "fit_ar", "baseline_ar"]


def smape(actual, predicted) -> float:
    """Symmetric mean absolute percentage error, percent in [0, 200].

    Element-wise 2|y - yhat| / (|y| + |yhat|), averaged; 0/0 terms count as 0.
    """
    y = np.asarray(actual, dtype=float)
    yh = np.asarray(predicted, dtype=float)
    if y.shape != yh.shape or y.size == 0:
        raise ValueError("sequences must be equal-length and non-empty")
    denom = np.abs(y) + np.abs(yh)
    terms = np.where(denom > 0, 2.0 * np.abs(y - yh) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(terms.mean() * 100.0)


def baseline_last_value(history, horizon_actuals) -> np.ndarray:
    """Naive model: the previous window's count is the next window's forecast.
    One-step-ahead over the test span, fed with actual history."""
    history = np.atleast_2d(np.asarray(history, dtype=float))
    actuals = np.atleast_2d(np.asarray(horizon_actuals, dtype=float))
    series = np.vstack([history, actuals])
    n_test = actuals.shape[0]
    return series[len(history) - 1 : len(history) - 1 + n_test]


def fit_ar(train, order: int) -> np.ndarray:
    """Least-squares AR(p) coefficients per container type, no intercept:
    yhat_{t+1} = sum_i a_i x_{t-i}. Returns (order, num_types)."""
    train = np.atleast_2d(np.asarray(train, dtype=float))
    W, D = train.shape
    if W <= order:
        raise ValueError(f"need more than order={order} windows of history")
    coeffs = np.empty((order, D))
    for j in range(D):
        x = train[:, j]
        rows = np.stack([x[order - 1 - i : W - 1 - i] for i in range(order)], axis=1)
        target = x[order:]
        sol, *_ = np.linalg.lstsq(rows, target, rcond=None)
        coeffs[:, j] = sol
    return coeffs


def baseline_ar(history, horizon_actuals, order: int, coeffs: np.ndarray | None = None) -> np.ndarray:
    """One-step-ahead AR(p) predictions over the test span; coefficients come
    from OLS on the history unless supplied."""
    history = np.atleast_2d(np.asarray(history, dtype=float))
    actuals = np.atleast_2d(np.asarray(horizon_actuals, dtype=float))
    if coeffs is None:
        coeffs = fit_ar(history, order)
    series = np.vstack([history, actuals])
    n_test, D = actuals.shape
    preds = np.empty((n_test, D))
    base = len(history)
    for s in range(n_test):
        t_idx = base + s  # predicting series[t_idx] from the p windows before it
        lags = series[t_idx - order : t_idx][::-1]  # most recent first
        preds[s] = np.sum(lags * coeffs, axis=0)
    return preds
