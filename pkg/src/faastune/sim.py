"""Deterministic discrete-event FaaS cluster simulator.

Models container lifecycle (cold-absent -> warming -> warm-idle <-> executing),
a pre-warm pool adjusted at window boundaries by a policy, DAG execution with
transfer delays, execution-time noise (Gaussian + interference outliers), and
cost/metric accounting. One instance is single-threaded and owns its state;
instances with distinct seeds are independent.
"""

from __future__ import annotations

import csv
import heapq
import json

from dataclasses import dataclass, field

import numpy as np

from .tracegen import InvocationTrace
from .workflow import CostModel, ResourceConfig, StageSpec, WorkflowSpec

__all__ = [
    "NoiseModel",
    "SimOptions",
    "WindowStats",
    "SimMetrics",
    "noiseless_exec_ms",
    "run_sim",
    "replay_with_policy",
    "extract_demand_trace",
]

# Event priorities: pool adjustments happen before completions, completions free
# capacity before new work at the same instant.
_P_BOUNDARY = 0
_P_COMPLETE = 1
_P_READY = 2
_P_ARRIVE = 3
_P_SPILL = 4


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian execution noise comes from each StageSpec; outliers are
    interference events multiplying execution time by Uniform[lo, hi]."""

    outlier_prob: float = 0.0
    outlier_lo: float = 3.0
    outlier_hi: float = 10.0

    def __post_init__(self):
        if not 0 <= self.outlier_prob <= 1:
            raise ValueError("outlier_prob must be in [0, 1]")
        if self.outlier_lo < 1:
            raise ValueError("outlier multiplier lo must be >= 1")
        if self.outlier_hi < self.outlier_lo:
            raise ValueError("outlier multiplier range inverted")


@dataclass(frozen=True)
class SimOptions:
    cold_penalty: float = 1.2  # execution-time inflation on a cold start, beyond init
    net_kb_per_ms: float = 100.0  # stage-to-stage transfer bandwidth
    spill_wait_factor: float = 2.0  # queue wait threshold, in units of mean exec time
    cost_model: CostModel = field(default_factory=CostModel)


def noiseless_exec_ms(stage: StageSpec, cpu_shares: float, memory_mb: float) -> float:
    """Ground-truth execution model: diminishing returns past cpu_saturation,
    thrashing slowdown when memory is below the working set."""
    speed = min(cpu_shares, stage.cpu_saturation)
    slowdown = 1.0 if memory_mb >= stage.working_set_mb else stage.working_set_mb / memory_mb
    return 1000.0 * stage.compute_work / speed * slowdown


@dataclass
class WindowStats:
    """Per-window observables a pool policy may look at (past windows only)."""

    window: int
    invocations: dict[str, int]
    cold_starts: dict[str, int]
    peak_in_use: dict[str, int]
    pool_size: dict[str, int]  # live containers right after the boundary adjustment
    busy_container_s: dict[str, float]
    alive_container_s: dict[str, float]

    def utilization(self, stage_id: str) -> float:
        """Busy fraction of the stage's container time; 1.0 when demand hit an
        empty pool (forces reactive policies to scale up)."""
        alive = self.alive_container_s.get(stage_id, 0.0)
        if alive <= 0:
            return 1.0 if self.invocations.get(stage_id, 0) > 0 else 0.0
        return min(1.0, self.busy_container_s.get(stage_id, 0.0) / alive)


@dataclass
class InvocationRecord:
    workflow_id: str
    start_s: float
    e2e_ms: float
    cold_starts_in_path: int
    cost: float


@dataclass
class SimMetrics:
    invocations: int
    stage_invocations: int
    cold_starts: int
    cold_start_rate: float
    e2e_latencies_ms: np.ndarray
    qos_violation_rate: float
    cpu_seconds: float
    mb_seconds: float
    provisioned_mb_seconds: float
    records: list[InvocationRecord]
    window_stats: list[WindowStats]
    pool_log: list[dict[str, int]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["workflow_id", "start_s", "e2e_ms", "cold_starts_in_path", "cost"])
            for r in self.records:
                w.writerow([r.workflow_id, repr(r.start_s), repr(r.e2e_ms), r.cold_starts_in_path, repr(r.cost)])

    def summary(self) -> dict:
        return {
            "invocations": self.invocations,
            "stage_invocations": self.stage_invocations,
            "cold_starts": self.cold_starts,
            "cold_start_rate": self.cold_start_rate,
            "qos_violation_rate": self.qos_violation_rate,
            "mean_e2e_ms": float(self.e2e_latencies_ms.mean()) if len(self.e2e_latencies_ms) else 0.0,
            "p99_e2e_ms": float(np.percentile(self.e2e_latencies_ms, 99)) if len(self.e2e_latencies_ms) else 0.0,
            "cpu_seconds": self.cpu_seconds,
            "mb_seconds": self.mb_seconds,
            "provisioned_mb_seconds": self.provisioned_mb_seconds,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


_WARMING, _WARM_IDLE, _EXECUTING = "warming", "warm-idle", "executing"


class _Container:
    __slots__ = ("cid", "stage_id", "memory_mb", "state", "slots", "last_used", "last_flush")

    def __init__(self, cid, stage_id, memory_mb, state, now):
        self.cid = cid
        self.stage_id = stage_id
        self.memory_mb = memory_mb
        self.state = state
        self.slots = 0
        self.last_used = now
        self.last_flush = now


class _Invocation:
    __slots__ = ("arrival", "remaining", "pending_upstreams", "ready_at", "done_at", "cold", "cost")

    def __init__(self, arrival, workflow: WorkflowSpec):
        self.arrival = arrival
        self.remaining = len(workflow.stages)
        self.pending_upstreams = {s.id: len(workflow.upstreams(s.id)) for s in workflow.stages}
        self.ready_at = {s.id: arrival for s in workflow.stages}
        self.done_at = arrival
        self.cold = 0
        self.cost = 0.0


class _QueuedJob:
    __slots__ = ("inv", "enqueued", "active")

    def __init__(self, inv, enqueued):
        self.inv = inv
        self.enqueued = enqueued
        self.active = True


class _Sim:
    def __init__(self, workflow, config, trace, pool_policy, noise, seed, options, initial_warm):
        missing = set(workflow.stage_ids) - set(config.stage_ids)
        if missing:
            raise ValueError(f"config missing stages {sorted(missing)}")
        if trace.workflow_id != workflow.id:
            raise ValueError(
                f"trace workflow_id '{trace.workflow_id}' does not match workflow '{workflow.id}'"
            )
        self.wf = workflow
        self.config = config
        self.trace = trace
        self.policy = pool_policy
        self.noise = noise or NoiseModel()
        self.opt = options or SimOptions()
        self.rng = np.random.default_rng(seed)
        self.now = 0.0
        self._seq = 0
        self.events: list = []

        self.stage_by_id = {s.id: s for s in workflow.stages}
        self.base_exec_ms = {
            sid: noiseless_exec_ms(self.stage_by_id[sid], config[sid].cpu_shares, config[sid].memory_mb)
            for sid in workflow.stage_ids
        }
        self.spill_wait_ms = {
            sid: self.opt.spill_wait_factor * self.base_exec_ms[sid] for sid in workflow.stage_ids
        }

        self.warm_idle: dict[str, list[_Container]] = {sid: [] for sid in workflow.stage_ids}
        self.active: dict[str, list[_Container]] = {sid: [] for sid in workflow.stage_ids}  # executing or warming
        self.queues: dict[str, list[_QueuedJob]] = {sid: [] for sid in workflow.stage_ids}
        self.in_use: dict[str, int] = {sid: 0 for sid in workflow.stage_ids}
        self._next_cid = 0

        # global accumulators
        self.cpu_seconds = 0.0
        self.mb_seconds = 0.0
        self.provisioned_mb_seconds = 0.0
        # per-window accumulators
        self.win_busy = {sid: 0.0 for sid in workflow.stage_ids}
        self.win_alive = {sid: 0.0 for sid in workflow.stage_ids}
        self.win_inv = {sid: 0 for sid in workflow.stage_ids}
        self.win_cold = {sid: 0 for sid in workflow.stage_ids}
        self.win_peak = {sid: 0 for sid in workflow.stage_ids}
        self.win_pool = {sid: 0 for sid in workflow.stage_ids}

        self.window_stats: list[WindowStats] = []
        self.pool_log: list[dict[str, int]] = []
        self.records: list[InvocationRecord] = []
        self.stage_invocations = 0
        self.cold_starts = 0

        for sid, n in (initial_warm or {}).items():
            for _ in range(n):
                self._spawn_warm(sid, 0.0)

    # -- event plumbing -------------------------------------------------

    def _push(self, time, prio, kind, payload=None):
        self._seq += 1
        heapq.heappush(self.events, (time, prio, self._seq, kind, payload))

    # -- accounting ------------------------------------------------------

    def _flush(self, cont: _Container, now: float):
        dt = now - cont.last_flush
        if dt > 0:
            mem_time = dt * cont.memory_mb
            if cont.state == _WARM_IDLE:
                self.provisioned_mb_seconds += mem_time
            else:  # warming or executing: execution-attributed memory
                self.mb_seconds += mem_time
            self.win_alive[cont.stage_id] += dt
            if cont.state == _EXECUTING:
                self.win_busy[cont.stage_id] += dt
        cont.last_flush = now

    def _set_state(self, cont: _Container, state: str, now: float):
        self._flush(cont, now)
        cont.state = state

    def _bump_in_use(self, sid: str, delta: int):
        self.in_use[sid] += delta
        if self.in_use[sid] > self.win_peak[sid]:
            self.win_peak[sid] = self.in_use[sid]

    # -- container lifecycle ----------------------------------------------

    def _spawn_warm(self, sid: str, now: float) -> _Container:
        self._next_cid += 1
        cont = _Container(self._next_cid, sid, self.config[sid].memory_mb, _WARM_IDLE, now)
        self.warm_idle[sid].append(cont)
        return cont

    def _terminate_lru(self, sid: str, now: float):
        cont = self.warm_idle[sid].pop(0)
        self._flush(cont, now)

    def _exec_noise(self, sid: str) -> float:
        stage = self.stage_by_id[sid]
        factor = 1.0
        if stage.exec_noise_std > 0:
            factor = max(0.05, 1.0 + stage.exec_noise_std * self.rng.standard_normal())
        if self.noise.outlier_prob > 0:
            if self.rng.random() < self.noise.outlier_prob:
                factor *= self.rng.uniform(self.noise.outlier_lo, self.noise.outlier_hi)
        return factor

    def _start_exec(self, cont: _Container, inv: _Invocation, sid: str, now: float, cold: bool):
        res = self.config[sid]
        dur_ms = self.base_exec_ms[sid] * self._exec_noise(sid)
        if cold:
            dur_ms *= self.opt.cold_penalty
        if cont.state != _EXECUTING:
            self._set_state(cont, _EXECUTING, now)
        if cont.slots == 0 and not cold:
            self._bump_in_use(sid, 1)
        cont.slots += 1
        cont.last_used = now
        dur_s = dur_ms / 1000.0
        self.cpu_seconds += dur_s * res.cpu_shares
        cm = self.opt.cost_model
        inv.cost += dur_s * (res.cpu_shares * cm.price_per_cpu_second + res.memory_mb * cm.price_per_mb_second)
        self._push(now + dur_ms / 1000.0, _P_COMPLETE, "complete", (cont, inv, sid))

    def _start_cold(self, inv: _Invocation, sid: str, now: float):
        stage = self.stage_by_id[sid]
        res = self.config[sid]
        self._next_cid += 1
        cont = _Container(self._next_cid, sid, res.memory_mb, _WARMING, now)
        self.active[sid].append(cont)
        self._bump_in_use(sid, 1)
        inv.cold += 1
        self.cold_starts += 1
        self.win_cold[sid] += 1
        init_s = stage.cold_init_ms / 1000.0
        inv.cost += init_s * res.memory_mb * self.opt.cost_model.price_per_mb_second
        self._push(now + init_s, _P_READY, "ready", (cont, inv, sid))

    # -- request handling --------------------------------------------------

    def _request_stage(self, inv: _Invocation, sid: str, now: float):
        self.stage_invocations += 1
        self.win_inv[sid] += 1
        if self.warm_idle[sid]:
            cont = self.warm_idle[sid].pop()  # most-recently-used first
            self.active[sid].append(cont)
            self._start_exec(cont, inv, sid, now, cold=False)
            return
        conc = self.config[sid].concurrency
        for cont in self.active[sid]:
            if cont.state == _EXECUTING and cont.slots < conc:
                self._start_exec(cont, inv, sid, now, cold=False)
                return
        if not self.active[sid]:
            self._start_cold(inv, sid, now)
            return
        job = _QueuedJob(inv, now)
        self.queues[sid].append(job)
        self._push(now + self.spill_wait_ms[sid] / 1000.0, _P_SPILL, "spill", (job, sid))

    def _admit_queued(self, sid: str, now: float):
        conc = self.config[sid].concurrency
        queue = self.queues[sid]
        while queue:
            target = None
            if self.warm_idle[sid]:
                target = self.warm_idle[sid].pop()
                self.active[sid].append(target)
            else:
                for cont in self.active[sid]:
                    if cont.state == _EXECUTING and cont.slots < conc:
                        target = cont
                        break
            if target is None:
                return
            job = queue.pop(0)
            if not job.active:
                continue
            job.active = False
            self._start_exec(target, job.inv, sid, now, cold=False)

    # -- event handlers ------------------------------------------------------

    def _on_complete(self, cont: _Container, inv: _Invocation, sid: str, now: float):
        cont.slots -= 1
        cont.last_used = now
        if cont.slots == 0:
            self._set_state(cont, _WARM_IDLE, now)
            self.active[sid].remove(cont)
            self.warm_idle[sid].append(cont)
            self._bump_in_use(sid, -1)
        self._stage_done(inv, sid, now)
        self._admit_queued(sid, now)

    def _on_ready(self, cont: _Container, inv: _Invocation, sid: str, now: float):
        # cold init finished; in_use was already counted at spawn
        self._start_exec(cont, inv, sid, now, cold=True)
        self._admit_queued(sid, now)

    def _on_spill(self, job: _QueuedJob, sid: str, now: float):
        if not job.active:
            return
        job.active = False
        self.queues[sid] = [j for j in self.queues[sid] if j is not job]
        self._start_cold(job.inv, sid, now)

    def _stage_done(self, inv: _Invocation, sid: str, now: float):
        inv.remaining -= 1
        inv.done_at = max(inv.done_at, now)
        stage = self.stage_by_id[sid]
        transfer_ms = stage.output_size_kb / self.opt.net_kb_per_ms if stage.output_size_kb else 0.0
        for down in self.wf.downstreams(sid):
            inv.ready_at[down] = max(inv.ready_at[down], now + transfer_ms / 1000.0)
            inv.pending_upstreams[down] -= 1
            if inv.pending_upstreams[down] == 0:
                self._push(inv.ready_at[down], _P_ARRIVE, "stage", (inv, down))
        if inv.remaining == 0:
            e2e_ms = (inv.done_at - inv.arrival) * 1000.0
            self.records.append(
                InvocationRecord(self.wf.id, inv.arrival, e2e_ms, inv.cold, inv.cost)
            )

    def _on_boundary(self, w: int, now: float):
        for sid in self.wf.stage_ids:
            for cont in self.warm_idle[sid]:
                self._flush(cont, now)
            for cont in self.active[sid]:
                self._flush(cont, now)
        if w > 0:
            self.window_stats.append(
                WindowStats(
                    window=w - 1,
                    invocations=dict(self.win_inv),
                    cold_starts=dict(self.win_cold),
                    peak_in_use=dict(self.win_peak),
                    pool_size=dict(self.win_pool),
                    busy_container_s=dict(self.win_busy),
                    alive_container_s=dict(self.win_alive),
                )
            )
        for sid in self.wf.stage_ids:
            self.win_busy[sid] = 0.0
            self.win_alive[sid] = 0.0
            self.win_inv[sid] = 0
            self.win_cold[sid] = 0
            self.win_peak[sid] = self.in_use[sid]

        if self.policy is not None:
            targets = self.policy.observe(self.window_stats)
            for sid, t in targets.items():
                if t < 0:
                    raise ValueError(f"policy returned negative target {t} for stage {sid}")
            for sid in self.wf.stage_ids:
                target = int(targets.get(sid, 0))
                live = len(self.warm_idle[sid]) + len(self.active[sid])
                while live < target:
                    self._spawn_warm(sid, now)
                    live += 1
                while live > target and self.warm_idle[sid]:
                    self._terminate_lru(sid, now)
                    live -= 1
                self._admit_queued(sid, now)
        for sid in self.wf.stage_ids:
            self.win_pool[sid] = len(self.warm_idle[sid]) + len(self.active[sid])
        self.pool_log.append(dict(self.win_pool))

    # -- main loop -------------------------------------------------------------

    def run(self) -> SimMetrics:
        num_windows = self.trace.num_windows
        for w in range(num_windows):
            self._push(w * self.trace.window_s, _P_BOUNDARY, "boundary", w)
        arrivals = self.trace.invocation_times()
        for t in arrivals:
            self._push(float(t), _P_ARRIVE, "invoke", None)

        while self.events:
            time, _prio, _seq, kind, payload = heapq.heappop(self.events)
            self.now = time
            if kind == "boundary":
                self._on_boundary(payload, time)
            elif kind == "invoke":
                inv = _Invocation(time, self.wf)
                for root in self.wf.roots:
                    self._request_stage(inv, root, time)
            elif kind == "stage":
                inv, sid = payload
                self._request_stage(inv, sid, time)
            elif kind == "complete":
                cont, inv, sid = payload
                self._on_complete(cont, inv, sid, time)
            elif kind == "ready":
                cont, inv, sid = payload
                self._on_ready(cont, inv, sid, time)
            elif kind == "spill":
                job, sid = payload
                self._on_spill(job, sid, time)

        end = max(self.now, num_windows * self.trace.window_s)
        for sid in self.wf.stage_ids:
            for cont in self.warm_idle[sid] + self.active[sid]:
                self._flush(cont, end)
        # close out the final window's stats
        self.window_stats.append(
            WindowStats(
                window=num_windows - 1,
                invocations=dict(self.win_inv),
                cold_starts=dict(self.win_cold),
                peak_in_use=dict(self.win_peak),
                pool_size=dict(self.win_pool),
                busy_container_s=dict(self.win_busy),
                alive_container_s=dict(self.win_alive),
            )
        )

        self.records.sort(key=lambda r: r.start_s)
        lats = np.array([r.e2e_ms for r in self.records])
        n_inv = len(self.records)
        qos = self.wf.qos_latency_ms
        return SimMetrics(
            invocations=n_inv,
            stage_invocations=self.stage_invocations,
            cold_starts=self.cold_starts,
            cold_start_rate=self.cold_starts / self.stage_invocations if self.stage_invocations else 0.0,
            e2e_latencies_ms=lats,
            qos_violation_rate=float((lats > qos).mean()) if n_inv else 0.0,
            cpu_seconds=self.cpu_seconds,
            mb_seconds=self.mb_seconds,
            provisioned_mb_seconds=self.provisioned_mb_seconds,
            records=self.records,
            window_stats=self.window_stats,
            pool_log=self.pool_log,
        )


def run_sim(
    workflow: WorkflowSpec,
    config: ResourceConfig,
    trace: InvocationTrace,
    pool_policy=None,
    noise: NoiseModel | None = None,
    seed: int = 0,
    options: SimOptions | None = None,
    initial_warm: dict[str, int] | None = None,
) -> SimMetrics:
    """Replay the trace through the workflow under one resource config.

    pool_policy=None means no pool management: containers stay warm forever
    once created (infinite keep-alive). initial_warm pre-populates the pool at
    t=0, which is how warm-start evaluation runs are constructed.
    """
    sim = _Sim(workflow, config, trace, pool_policy, noise, seed, options, initial_warm)
    return sim.run()


def replay_with_policy(
    workflow: WorkflowSpec,
    config: ResourceConfig,
    trace: InvocationTrace,
    pool_policy,
    noise: NoiseModel | None = None,
    seed: int = 0,
    options: SimOptions | None = None,
) -> tuple[list[dict[str, int]], SimMetrics]:
    """Window-by-window replay: the policy sets per-stage pre-warm targets at
    each boundary before that window's invocations arrive. Returns the
    per-window pool sizes alongside the metrics."""
    if pool_policy is None:
        raise ValueError("replay_with_policy requires a pool policy")
    metrics = run_sim(workflow, config, trace, pool_policy, noise, seed, options)
    return metrics.pool_log, metrics


def extract_demand_trace(
    workflow: WorkflowSpec,
    config: ResourceConfig,
    trace: InvocationTrace,
    noise: NoiseModel | None = None,
    seed: int = 0,
    options: SimOptions | None = None,
) -> InvocationTrace:
    """Per-window required-container counts (peak concurrent use per stage),
    observed by replaying with infinite keep-alive. This demand series is what
    the pool forecaster trains on and predicts."""
    metrics = run_sim(workflow, config, trace, None, noise, seed, options)
    sids = workflow.stage_ids
    demand = np.zeros((trace.num_windows, len(sids)), dtype=np.int64)
    for ws in metrics.window_stats:
        for j, sid in enumerate(sids):
            demand[ws.window, j] = ws.peak_in_use.get(sid, 0)
    return trace.with_counts(demand, container_types=sids)
