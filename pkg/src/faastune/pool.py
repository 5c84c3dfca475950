"""Pre-warm pool policies: turn window history (and forecasts) into per-stage
container targets.

Every policy implements observe(history) -> {stage_id: target}, where history
is the list of completed-window WindowStats. Decisions therefore only ever use
past windows; calendar features of the upcoming window are known in advance
and do not count as lookahead.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PoolPolicy",
    "PoolDecision",
    "target_from_forecast",
    "policy_fixed_target",
    "policy_oracle",
    "policy_fixed_keepalive",
    "policy_autoscale",
    "policy_histogram",
    "policy_forecast",
    "write_decision_log",
]


class PoolPolicy:
    """Interface: observe(history of WindowStats) -> per-stage targets."""

    def observe(self, history) -> dict[str, int]:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class PoolDecision:
    """Per-type pre-warm targets derived from one forecast."""

    targets: tuple[int, ...]
    z_quantile: float
    forecast_mean: tuple[float, ...]
    forecast_std: tuple[float, ...]


def target_from_forecast(forecast, z: float, max_pool: int) -> PoolDecision:
    """target = clip(ceil(mean + z * std), 0, max_pool), per container type."""
    mean = np.atleast_1d(np.asarray(forecast.mean, dtype=float))
    var = np.atleast_1d(np.asarray(forecast.variance, dtype=float))
    if np.any(var < 0):
        raise ValueError("forecast variance must be >= 0")
    std = np.sqrt(var)
    raw = mean + z * std
    targets = tuple(
        int(min(max_pool, max(0, math.ceil(v - 1e-9)))) for v in raw
    )
    return PoolDecision(targets, z, tuple(mean), tuple(std))


class _FixedTarget(PoolPolicy):
    def __init__(self, targets: dict[str, int]):
        self.targets = dict(targets)

    def observe(self, history):
        return dict(self.targets)


def policy_fixed_target(targets: dict[str, int]) -> PoolPolicy:
    return _FixedTarget(targets)


class _Oracle(PoolPolicy):
    """Benchmark-only: reads the true per-window demand table (lookahead by
    construction, exempt from the causality property)."""

    def __init__(self, stage_ids, demand: np.ndarray, margin: int = 0):
        self.stage_ids = tuple(stage_ids)
        self.demand = np.atleast_2d(demand)
        self.margin = margin

    def observe(self, history):
        w = len(history)
        if w >= len(self.demand):
            return {sid: 0 for sid in self.stage_ids}
        return {
            sid: int(self.demand[w, j]) + self.margin
            for j, sid in enumerate(self.stage_ids)
        }


def policy_oracle(stage_ids, demand: np.ndarray, margin: int = 0) -> PoolPolicy:
    return _Oracle(stage_ids, demand, margin)


class _FixedKeepAlive(PoolPolicy):
    """Window-granularity keep-alive: a container stays warm tau minutes after
    its last use, so the pool holds the peak demand of the last tau windows."""

    def __init__(self, stage_ids, tau_minutes: float, window_s: float):
        self.stage_ids = tuple(stage_ids)
        self.tau_windows = int(round(tau_minutes * 60.0 / window_s))

    def observe(self, history):
        recent = history[-self.tau_windows:] if self.tau_windows > 0 else []
        return {
            sid: max((ws.peak_in_use.get(sid, 0) for ws in recent), default=0)
            for sid in self.stage_ids
        }


def policy_fixed_keepalive(stage_ids, tau_minutes: float = 10.0, window_s: float = 60.0) -> PoolPolicy:
    return _FixedKeepAlive(stage_ids, tau_minutes, window_s)


class _Autoscale(PoolPolicy):
    """Reactive feedback: scale up in large steps on high utilization, down in
    small steps on low utilization."""

    def __init__(self, stage_ids, high_util, low_util, step_up, step_down, max_pool):
        self.stage_ids = tuple(stage_ids)
        self.high = high_util
        self.low = low_util
        self.up = step_up
        self.down = step_down
        self.max_pool = max_pool
        self.current = {sid: 0 for sid in self.stage_ids}

    def observe(self, history):
        if history:
            last = history[-1]
            for sid in self.stage_ids:
                util = last.utilization(sid)
                if util > self.high:
                    self.current[sid] = min(self.max_pool, self.current[sid] + self.up)
                elif util < self.low:
                    self.current[sid] = max(0, self.current[sid] - self.down)
        return dict(self.current)


def policy_autoscale(
    stage_ids,
    high_util: float = 0.7,
    low_util: float = 0.3,
    step_up: int = 4,
    step_down: int = 1,
    max_pool: int = 64,
) -> PoolPolicy:
    return _Autoscale(stage_ids, high_util, low_util, step_up, step_down, max_pool)


class _Histogram(PoolPolicy):
    """Inter-arrival-histogram keep-alive at window granularity: after the
    last active window, pre-warm from the p_lo gap bound until the p_hi bound.
    Falls back to fixed keep-alive until 10 gaps have been observed."""

    def __init__(self, stage_ids, percentile_lo, percentile_hi, fallback_tau_minutes, window_s):
        self.stage_ids = tuple(stage_ids)
        self.p_lo = percentile_lo
        self.p_hi = percentile_hi
        self.fallback = _FixedKeepAlive(stage_ids, fallback_tau_minutes, window_s)

    def observe(self, history):
        fallback = self.fallback.observe(history)
        out = {}
        w_next = len(history)
        for sid in self.stage_ids:
            active = [ws.window for ws in history if ws.invocations.get(sid, 0) > 0]
            gaps = np.diff(active)
            if len(gaps) < 10:
                out[sid] = fallback[sid]
                continue
            lo = int(math.floor(np.percentile(gaps, self.p_lo)))
            hi = int(math.ceil(np.percentile(gaps, self.p_hi)))
            since_last = w_next - active[-1]
            if lo <= since_last <= hi:
                level = max(ws.peak_in_use.get(sid, 0) for ws in history[-20:])
                out[sid] = max(1, level)
            else:
                out[sid] = 0
        return out


def policy_histogram(
    stage_ids,
    percentile_lo: float = 5.0,
    percentile_hi: float = 99.0,
    fallback_tau_minutes: float = 10.0,
    window_s: float = 60.0,
) -> PoolPolicy:
    return _Histogram(stage_ids, percentile_lo, percentile_hi, fallback_tau_minutes, window_s)


class _ForecastPolicy(PoolPolicy):
    """Model-driven pool: forecast next-window demand per stage from the
    trailing input window of observed demand, add z-sigma headroom."""

    def __init__(self, model, stage_ids, externals, z, max_pool, mc_passes, seed):
        self.model = model
        self.stage_ids = tuple(stage_ids)
        self.externals = externals  # ExternalFeatures per window of the replayed trace
        self.z = z
        self.max_pool = max_pool
        self.mc_passes = mc_passes
        self.seed = seed
        self.decisions: list[tuple[int, PoolDecision]] = []

    def observe(self, history):
        w_next = len(history)
        t = self.model.config.input_window
        if w_next < t:
            bootstrap = {
                sid: max((ws.peak_in_use.get(sid, 0) for ws in history), default=0)
                for sid in self.stage_ids
            }
            return bootstrap
        demand = np.array(
            [[ws.peak_in_use.get(sid, 0) for sid in self.stage_ids] for ws in history[-t:]],
            dtype=float,
        )
        ext = self.externals[min(w_next, len(self.externals) - 1)].as_array()
        forecast = self.model.predict_mc(demand, ext, self.mc_passes, seed=self.seed + w_next)
        decision = target_from_forecast(forecast, self.z, self.max_pool)
        self.decisions.append((w_next, decision))
        return {sid: decision.targets[j] for j, sid in enumerate(self.stage_ids)}


def policy_forecast(
    model,
    stage_ids,
    externals,
    z: float = 1.65,
    max_pool: int = 64,
    mc_passes: int = 30,
    seed: int = 0,
) -> PoolPolicy:
    return _ForecastPolicy(model, stage_ids, externals, z, max_pool, mc_passes, seed)


def write_decision_log(policy, stage_ids, path) -> None:
    """Per-window decision log CSV: window,stage,target,mean,std,z."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "stage", "target", "mean", "std", "z"])
        for window, d in getattr(policy, "decisions", []):
            for j, sid in enumerate(stage_ids):
                w.writerow([window, sid, d.targets[j], repr(d.forecast_mean[j]),
                            repr(d.forecast_std[j]), d.z_quantile])
