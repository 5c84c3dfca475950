"""Per-minute invocation traces: CSV loading, Poisson synthesis, trace statistics.

A trace stores per-window, per-container-type invocation counts plus aligned
calendar features. Synthetic traces additionally keep the exact arrival
instants of the entry stream; loaded traces only have counts, and arrival
instants are reconstructed as conditional-uniform order statistics (the exact
conditional law of a Poisson process given window counts).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TRIGGER_TYPES",
    "ExternalFeatures",
    "InvocationTrace",
    "ArrivalProcess",
    "load_trace",
    "save_trace",
    "synth_trace",
    "diurnal_rates",
    "coefficient_of_variation",
    "split_train_test",
]

TRIGGER_TYPES = ("http", "storage", "event", "timer")

_SECONDS_PER_DAY = 86_400
_SECONDS_PER_WEEK = 604_800


@dataclass(frozen=True)
class ExternalFeatures:
    """Calendar + trigger features for one window."""

    tod_sin: float
    tod_cos: float
    dow_sin: float
    dow_cos: float
    trigger_onehot: tuple[float, float, float, float]

    def __post_init__(self):
        for s, c, name in (
            (self.tod_sin, self.tod_cos, "tod"),
            (self.dow_sin, self.dow_cos, "dow"),
        ):
            if abs(s * s + c * c - 1.0) > 1e-9:
                raise ValueError(f"{name} encoding is off the unit circle")
        if abs(sum(self.trigger_onehot) - 1.0) > 1e-9:
            raise ValueError("trigger_onehot must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.tod_sin, self.tod_cos, self.dow_sin, self.dow_cos, *self.trigger_onehot]
        )

    @staticmethod
    def from_timestamp(timestamp_s: float, trigger: str) -> "ExternalFeatures":
        tod = 2.0 * math.pi * (timestamp_s % _SECONDS_PER_DAY) / _SECONDS_PER_DAY
        dow = 2.0 * math.pi * (timestamp_s % _SECONDS_PER_WEEK) / _SECONDS_PER_WEEK
        if trigger not in TRIGGER_TYPES:
            raise ValueError(f"unknown trigger type '{trigger}'")
        onehot = tuple(1.0 if t == trigger else 0.0 for t in TRIGGER_TYPES)
        return ExternalFeatures(math.sin(tod), math.cos(tod), math.sin(dow), math.cos(dow), onehot)


NUM_EXTERNAL_FEATURES = 4 + len(TRIGGER_TYPES)


@dataclass(frozen=True)
class InvocationTrace:
    """Windowed invocation counts for one workflow.

    counts has shape (num_windows, num_types), int, aligned with externals.
    arrivals, when present, holds the exact entry-invocation instants in
    seconds from trace start (synthetic traces only).
    """

    workflow_id: str
    window_s: float
    container_types: tuple[str, ...]
    counts: np.ndarray
    externals: tuple[ExternalFeatures, ...]
    arrivals: np.ndarray | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim == 1:
            counts = counts[:, None]
        if counts.shape[1] != len(self.container_types):
            raise ValueError("counts columns must match container_types")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.allclose(counts, np.round(counts)):
                raise ValueError("counts must be integers")
            counts = counts.astype(np.int64)
        object.__setattr__(self, "counts", counts)
        if len(self.externals) != counts.shape[0]:
            raise ValueError("externals must align 1:1 with windows")
        if self.arrivals is not None:
            arr = np.asarray(self.arrivals, dtype=float)
            if np.any(np.diff(arr) < 0):
                raise ValueError("arrivals must be sorted")
            object.__setattr__(self, "arrivals", arr)

    @property
    def num_windows(self) -> int:
        return self.counts.shape[0]

    @property
    def num_types(self) -> int:
        return self.counts.shape[1]

    def external_matrix(self) -> np.ndarray:
        return np.stack([e.as_array() for e in self.externals])

    def entry_counts(self) -> np.ndarray:
        """Per-window workflow-invocation counts (first container type)."""
        return self.counts[:, 0]

    def invocation_times(self) -> np.ndarray:
        """Entry-invocation instants in seconds; reconstructed when not stored.

        Reconstruction draws uniform order statistics per window with a
        fixed generator, so it is deterministic for a given trace.
        """
        if self.arrivals is not None:
            return self.arrivals
        rng = np.random.default_rng(0)
        times = []
        for w, c in enumerate(self.entry_counts()):
            if c > 0:
                offs = np.sort(rng.uniform(0.0, self.window_s, size=int(c)))
                times.append(w * self.window_s + offs)
        if not times:
            return np.empty(0)
        return np.concatenate(times)

    def with_counts(self, counts: np.ndarray, container_types=None) -> "InvocationTrace":
        """Same calendar frame, different count matrix (e.g. a demand series)."""
        return InvocationTrace(
            workflow_id=self.workflow_id,
            window_s=self.window_s,
            container_types=tuple(container_types or self.container_types),
            counts=counts,
            externals=self.externals,
            arrivals=None,
        )


@dataclass(frozen=True)
class ArrivalProcess:
    """Poisson arrival process with a per-window rate schedule (invocations/min)."""

    rates_per_min: np.ndarray
    seed: int = 0

    def __post_init__(self):
        rates = np.asarray(self.rates_per_min, dtype=float)
        if np.any(rates < 0):
            raise ValueError("rates must be >= 0")
        object.__setattr__(self, "rates_per_min", rates)


def synth_trace(
    process: ArrivalProcess,
    num_windows: int,
    workflow_id: str = "wf",
    window_s: float = 60.0,
    trigger: str = "http",
    start_timestamp_s: float = 0.0,
    container_type: str | None = None,
) -> InvocationTrace:
    """Sample a Poisson trace with exponential inter-arrival times.

    Arrival instants are generated exactly (count ~ Poisson, offsets ~ sorted
    uniforms, the conditional law of the process) and kept on the trace.
    """
    if num_windows < 1:
        raise ValueError("num_windows must be >= 1")
    rng = np.random.default_rng(process.seed)
    rates = process.rates_per_min
    if len(rates) < num_windows:
        rates = np.resize(rates, num_windows)
    counts = np.zeros(num_windows, dtype=np.int64)
    arrivals = []
    for w in range(num_windows):
        lam = rates[w] * window_s / 60.0
        c = rng.poisson(lam) if lam > 0 else 0
        counts[w] = c
        if c > 0:
            offs = np.sort(rng.uniform(0.0, window_s, size=c))
            arrivals.append(w * window_s + offs)
    externals = tuple(
        ExternalFeatures.from_timestamp(start_timestamp_s + w * window_s, trigger)
        for w in range(num_windows)
    )
    return InvocationTrace(
        workflow_id=workflow_id,
        window_s=window_s,
        container_types=(container_type or workflow_id,),
        counts=counts,
        externals=externals,
        arrivals=np.concatenate(arrivals) if arrivals else np.empty(0),
    )


def diurnal_rates(
    num_windows: int,
    base: float,
    amplitude: float = 0.0,
    burst_prob: float = 0.0,
    burst_height: float = 0.0,
    burst_len: int = 1,
    seed: int = 0,
    window_s: float = 60.0,
    square_period: int = 0,
    square_duty: float = 0.5,
    square_height: float = 0.0,
) -> np.ndarray:
    """Daily-periodic rate schedule with optional square surges and seeded bursts.

    rate(w) = base * (1 + amplitude * sin(2*pi*w/day)) plus a deterministic
    square surge (period/duty in windows, tod-locked) and random burst spikes
    at seeded windows. Rates clip at 0.
    """
    rng = np.random.default_rng(seed)
    w = np.arange(num_windows)
    day_windows = _SECONDS_PER_DAY / window_s
    rates = base * (1.0 + amplitude * np.sin(2.0 * np.pi * w / day_windows))
    if square_period > 0 and square_height > 0:
        on = (w % square_period) < max(1, int(round(square_duty * square_period)))
        rates = rates + square_height * on
    if burst_prob > 0 and burst_height > 0:
        starts = np.flatnonzero(rng.random(num_windows) < burst_prob)
        for s in starts:
            rates[s : s + burst_len] += burst_height
    return np.clip(rates, 0.0, None)


def save_trace(trace: InvocationTrace, path, triggers: dict[str, str] | None = None) -> None:
    """Write the per-(window, type) count rows; arrival instants are not persisted."""
    triggers = triggers or {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_s", "workflow_id", "container_type", "count", "trigger"])
        for w in range(trace.num_windows):
            onehot = trace.externals[w].trigger_onehot
            default_trigger = TRIGGER_TYPES[int(np.argmax(onehot))]
            for j, ctype in enumerate(trace.container_types):
                writer.writerow(
                    [
                        int(w * trace.window_s),
                        trace.workflow_id,
                        ctype,
                        int(trace.counts[w, j]),
                        triggers.get(ctype, default_trigger),
                    ]
                )


def load_trace(path, window_s: float = 60.0) -> InvocationTrace:
    """Parse the trace CSV; raises ValueError naming the offending line."""
    header_expected = ["timestamp_s", "workflow_id", "container_type", "count", "trigger"]
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("no windows: trace file is empty") from None
        if header != header_expected:
            raise ValueError(f"bad header {header}, expected {header_expected}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(f"malformed row, line {lineno}")
            ts_s, wf_id, ctype, count_s, trigger = row
            try:
                ts = float(ts_s)
                count = int(count_s)
            except ValueError:
                raise ValueError(f"malformed row, line {lineno}") from None
            if count < 0:
                raise ValueError(f"negative count, line {lineno}")
            if trigger not in TRIGGER_TYPES:
                raise ValueError(f"unknown trigger '{trigger}', line {lineno}")
            if abs(ts / window_s - round(ts / window_s)) > 1e-9:
                raise ValueError(f"timestamp {ts} not a multiple of window_s, line {lineno}")
            rows.append((ts, wf_id, ctype, count, trigger, lineno))
    if not rows:
        raise ValueError("no windows: trace file has no data rows")

    workflow_id = rows[0][1]
    for ts, wf_id, *_rest, lineno in rows:
        if wf_id != workflow_id:
            raise ValueError(f"multiple workflow ids in one trace, line {lineno}")
    last_ts = -math.inf
    for ts, *_rest, lineno in rows:
        if ts < last_ts:
            raise ValueError(f"non-monotone timestamps, line {lineno}")
        last_ts = ts

    types: list[str] = []
    trigger_of: dict[str, str] = {}
    for _ts, _wf, ctype, _c, trigger, _ln in rows:
        if ctype not in types:
            types.append(ctype)
            trigger_of[ctype] = trigger
    first_w = int(round(rows[0][0] / window_s))
    last_w = int(round(rows[-1][0] / window_s))
    num_windows = last_w - first_w + 1
    counts = np.zeros((num_windows, len(types)), dtype=np.int64)
    for ts, _wf, ctype, count, _trigger, _ln in rows:
        w = int(round(ts / window_s)) - first_w
        counts[w, types.index(ctype)] += count
    externals = tuple(
        ExternalFeatures.from_timestamp((first_w + w) * window_s, trigger_of[types[0]])
        for w in range(num_windows)
    )
    return InvocationTrace(
        workflow_id=workflow_id,
        window_s=window_s,
        container_types=tuple(types),
        counts=counts,
        externals=externals,
    )


def coefficient_of_variation(trace: InvocationTrace) -> float:
    """std/mean of entry inter-arrival times; >1 flags bursty traffic."""
    times = trace.invocation_times()
    if len(times) < 3:
        raise ValueError("need at least 2 inter-arrival intervals (3 arrivals)")
    gaps = np.diff(times)
    mean = gaps.mean()
    if mean == 0:
        raise ValueError("degenerate trace: all arrivals simultaneous")
    return float(gaps.std() / mean)


def split_train_test(trace: InvocationTrace, fraction: float) -> tuple[InvocationTrace, InvocationTrace]:
    """Chronological split: the first `fraction` of windows becomes train."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    cut = int(trace.num_windows * fraction)
    if cut == 0 or cut == trace.num_windows:
        raise ValueError("split would leave an empty side")
    t_cut = cut * trace.window_s

    def piece(lo_w, hi_w, shift_arrivals):
        arr = None
        if trace.arrivals is not None:
            lo_t, hi_t = lo_w * trace.window_s, hi_w * trace.window_s
            arr = trace.arrivals[(trace.arrivals >= lo_t) & (trace.arrivals < hi_t)]
            if shift_arrivals:
                arr = arr - t_cut
        return InvocationTrace(
            workflow_id=trace.workflow_id,
            window_s=trace.window_s,
            container_types=trace.container_types,
            counts=trace.counts[lo_w:hi_w],
            externals=trace.externals[lo_w:hi_w],
            arrivals=arr,
        )

    return piece(0, cut, False), piece(cut, trace.num_windows, True)
