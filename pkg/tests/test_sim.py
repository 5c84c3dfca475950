import numpy as np
import pytest

from faastune.sim import (
    NoiseModel,
    SimOptions,
    extract_demand_trace,
    noiseless_exec_ms,
    run_sim,
    replay_with_policy,
)
from faastune.tracegen import ArrivalProcess, ExternalFeatures, InvocationTrace, synth_trace
from faastune.workflow import ResourceConfig, StageSpec, StageResources, WorkflowSpec


def stage(sid, work=0.4, ws=100, init=800.0, noise=0.0, out_kb=0.0):
    return StageSpec(sid, compute_work=work, working_set_mb=ws, cold_init_ms=init,
                     exec_noise_std=noise, output_size_kb=out_kb)


def trace_at(times, wf="w", windows=None, window_s=60.0):
    times = np.asarray(times, dtype=float)
    if windows is None:
        windows = int(times.max() // window_s) + 1 if len(times) else 1
    counts = np.histogram(times, bins=windows, range=(0, windows * window_s))[0]
    ex = tuple(ExternalFeatures.from_timestamp(w * window_s, "http") for w in range(windows))
    return InvocationTrace(wf, window_s, (wf,), counts, ex, arrivals=times)


def config_for(wf, cpu=2.0, mem=256, conc=1):
    return ResourceConfig({sid: StageResources(cpu, mem, conc) for sid in wf.stage_ids})


NO_PENALTY = SimOptions(cold_penalty=1.0)


class FixedTarget:
    def __init__(self, targets):
        self.targets = targets

    def observe(self, history):
        return dict(self.targets)


def test_cold_start_latency_decomposition():
    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=5000)
    m = run_sim(wf, config_for(wf), trace_at([5.0]), options=NO_PENALTY)
    assert m.e2e_latencies_ms[0] == pytest.approx(1000.0)  # 800 init + 200 exec
    assert m.cold_starts == 1


def test_warm_start_latency():
    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=5000)
    m = run_sim(wf, config_for(wf), trace_at([5.0]), options=NO_PENALTY, initial_warm={"a": 1})
    assert m.e2e_latencies_ms[0] == pytest.approx(200.0)
    assert m.cold_starts == 0


def test_two_stage_chain_serial_latency():
    wf = WorkflowSpec("w", [stage("a"), stage("b")], [("a", "b")], qos_latency_ms=5000)
    m = run_sim(wf, config_for(wf), trace_at([5.0]), options=NO_PENALTY,
                initial_warm={"a": 1, "b": 1})
    assert m.e2e_latencies_ms[0] == pytest.approx(400.0)


def test_cold_penalty_inflates_exec():
    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=5000)
    m = run_sim(wf, config_for(wf), trace_at([5.0]), options=SimOptions(cold_penalty=1.2))
    assert m.e2e_latencies_ms[0] == pytest.approx(800.0 + 200.0 * 1.2)


def test_transfer_delay_added():
    wf = WorkflowSpec("w", [stage("a", out_kb=500.0), stage("b")], [("a", "b")],
                      qos_latency_ms=5000)
    m = run_sim(wf, config_for(wf), trace_at([5.0]),
                options=SimOptions(cold_penalty=1.0, net_kb_per_ms=100.0),
                initial_warm={"a": 1, "b": 1})
    assert m.e2e_latencies_ms[0] == pytest.approx(405.0)  # 200 + 5 transfer + 200


def test_cascading_cold_starts():
    stages = [stage(s) for s in "abc"]
    wf = WorkflowSpec("w", stages, [("a", "b"), ("b", "c")], qos_latency_ms=50_000)
    m = run_sim(wf, config_for(wf), trace_at([5.0]), options=NO_PENALTY)
    assert m.cold_starts == 3
    assert m.invocations == 1


def test_fanout_join_waits_for_all_upstreams():
    stages = [stage("root"), stage("fast", work=0.1), stage("slow", work=1.0), stage("join")]
    wf = WorkflowSpec("w", stages,
                      [("root", "fast"), ("root", "slow"), ("fast", "join"), ("slow", "join")],
                      qos_latency_ms=50_000)
    m = run_sim(wf, config_for(wf), trace_at([0.0]), options=NO_PENALTY,
                initial_warm={s.id: 1 for s in stages})
    # root 200 + max(50, 500) + join 200
    assert m.e2e_latencies_ms[0] == pytest.approx(900.0)


def test_determinism_same_seed():
    wf = WorkflowSpec("w", [stage("a", noise=0.3)], [], qos_latency_ms=1000)
    trace = synth_trace(ArrivalProcess(np.full(30, 6.0), seed=9), 30, workflow_id="w")
    noise = NoiseModel(outlier_prob=0.1)
    a = run_sim(wf, config_for(wf), trace, noise=noise, seed=11)
    b = run_sim(wf, config_for(wf), trace, noise=noise, seed=11)
    assert np.array_equal(a.e2e_latencies_ms, b.e2e_latencies_ms)
    assert a.cpu_seconds == b.cpu_seconds
    assert a.provisioned_mb_seconds == b.provisioned_mb_seconds


def test_noise_free_latencies_identical_across_seeds():
    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=1000)
    trace = synth_trace(ArrivalProcess(np.full(20, 4.0), seed=2), 20, workflow_id="w")
    a = run_sim(wf, config_for(wf), trace, seed=1)
    b = run_sim(wf, config_for(wf), trace, seed=999)
    assert np.array_equal(a.e2e_latencies_ms, b.e2e_latencies_ms)


def test_cpu_seconds_conservation():
    # noiseless: cpu_seconds = invocations * sum(exec_s * cpu_shares)
    wf = WorkflowSpec("w", [stage("a"), stage("b")], [("a", "b")], qos_latency_ms=10_000)
    cfg = config_for(wf, cpu=1.5, mem=256)
    trace = synth_trace(ArrivalProcess(np.full(10, 3.0), seed=4), 10, workflow_id="w")
    m = run_sim(wf, cfg, trace, options=NO_PENALTY, initial_warm={"a": 5, "b": 5})
    exec_s = noiseless_exec_ms(stage("a"), 1.5, 256) / 1000.0
    expected = m.invocations * 2 * exec_s * 1.5
    assert m.cpu_seconds == pytest.approx(expected, rel=1e-9)
    assert m.cold_starts == 0


def test_exec_model_monotone_in_cpu_and_mem():
    st = stage("a", work=1.0, ws=1000)
    cpu_grid = [0.5, 1.0, 1.5, 2.0, 3.0, 4.0]
    vals = [noiseless_exec_ms(st, c, 2048) for c in cpu_grid]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))
    mem_grid = [128, 256, 512, 1000, 2048]
    vals = [noiseless_exec_ms(st, 2.0, m) for m in mem_grid]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def test_memory_slowdown_below_working_set():
    st = stage("a", work=1.0, ws=1000)
    assert noiseless_exec_ms(st, 2.0, 500) == pytest.approx(noiseless_exec_ms(st, 2.0, 1000) * 2)


def test_policy_always_zero_all_cold():
    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=10_000)
    times = np.arange(5.0, 600.0, 90.0)  # one invocation every 1.5 windows
    pool_log, m = replay_with_policy(wf, config_for(wf), trace_at(times, windows=10),
                                     FixedTarget({"a": 0}), options=NO_PENALTY)
    assert m.cold_start_rate == 1.0
    assert all(p["a"] == 0 for p in pool_log)


def test_policy_oracle_target_no_cold():
    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=10_000)
    trace = synth_trace(ArrivalProcess(np.full(20, 5.0), seed=8), 20, workflow_id="w")
    _, m = replay_with_policy(wf, config_for(wf), trace, FixedTarget({"a": 50}),
                              options=NO_PENALTY)
    assert m.cold_start_rate == 0.0
    assert m.provisioned_mb_seconds > 0


def test_policy_negative_target_rejected():
    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=10_000)
    with pytest.raises(ValueError, match="negative target"):
        replay_with_policy(wf, config_for(wf), trace_at([5.0]), FixedTarget({"a": -1}))


def test_trace_workflow_mismatch_rejected():
    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=10_000)
    with pytest.raises(ValueError, match="workflow"):
        run_sim(wf, config_for(wf), trace_at([5.0], wf="other"))


def test_config_missing_stage_rejected():
    wf = WorkflowSpec("w", [stage("a"), stage("b")], [("a", "b")], qos_latency_ms=10_000)
    cfg = ResourceConfig({"a": StageResources(1.0, 128, 1)})
    with pytest.raises(ValueError, match="missing stages"):
        run_sim(wf, cfg, trace_at([5.0]))


def test_concurrency_admits_parallel_invocations():
    # two invocations at the same instant, conc=2: one container serves both warm
    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=10_000)
    cfg = config_for(wf, conc=2)
    m = run_sim(wf, cfg, trace_at([5.0, 5.0]), options=NO_PENALTY, initial_warm={"a": 1})
    assert m.cold_starts == 0
    assert np.allclose(m.e2e_latencies_ms, [200.0, 200.0])


def test_queue_spills_to_cold_after_wait():
    # conc=1, second invocation queues behind a long exec, then spills cold
    # once its wait exceeds spill_wait_factor * mean exec
    wf = WorkflowSpec("w", [stage("a", work=10.0)], [], qos_latency_ms=100_000)
    cfg = config_for(wf, cpu=1.0)  # exec = 10s
    opts = SimOptions(cold_penalty=1.0, spill_wait_factor=0.5)
    m = run_sim(wf, cfg, trace_at([1.0, 2.0]), options=opts, initial_warm={"a": 1})
    assert m.cold_starts == 1
    # without the spill it would have queued until t=11; cold start at t=7 instead
    assert m.e2e_latencies_ms[1] == pytest.approx((7.0 - 2.0 + 0.8 + 10.0) * 1000)


def test_provisioned_memory_accounting():
    # one warm container held idle for the whole 2-window run
    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=10_000)
    trace = trace_at([], windows=2)
    _, m = replay_with_policy(wf, config_for(wf, mem=256), trace, FixedTarget({"a": 1}))
    assert m.provisioned_mb_seconds == pytest.approx(120.0 * 256)


def test_fixed_keepalive_style_gap_trace_all_cold():
    # 20-minute gaps vs a 10-window lookback target: every invocation cold
    from faastune.pool import policy_fixed_keepalive

    wf = WorkflowSpec("w", [stage("a")], [], qos_latency_ms=10_000)
    times = np.arange(30.0, 7200.0, 1200.0)  # every 20 min
    trace = trace_at(times, windows=120)
    _, m = replay_with_policy(wf, config_for(wf), trace,
                              policy_fixed_keepalive(wf.stage_ids, tau_minutes=10),
                              options=NO_PENALTY)
    assert m.cold_start_rate == 1.0


def test_extract_demand_trace_counts_concurrency():
    wf = WorkflowSpec("w", [stage("a", work=0.2)], [], qos_latency_ms=10_000)
    # 3 simultaneous arrivals in window 0, 1 in window 2
    trace = trace_at([5.0, 5.0, 5.0, 125.0], windows=3)
    demand = extract_demand_trace(wf, config_for(wf, conc=1), trace)
    assert demand.counts[0, 0] == 3
    assert demand.counts[1, 0] == 0
    assert demand.counts[2, 0] == 1
