import numpy as np
import pytest
from hypothesis import given, strategies as st

from faastune.workflow import (
    BudgetSpec,
    ConfigSpaceTooLarge,
    CostModel,
    GridSpec,
    ResourceConfig,
    StageSpec,
    StageResources,
    WorkflowSpec,
    config_space_size,
    cost_of,
    enumerate_config_space,
    validate_workflow,
)


def chain3():
    stages = [
        StageSpec(sid, compute_work=0.5, working_set_mb=256, cold_init_ms=500)
        for sid in "ABC"
    ]
    return WorkflowSpec("chain3", stages, [("A", "B"), ("B", "C")], qos_latency_ms=2000)


def test_valid_chain():
    assert validate_workflow(chain3()) == []


def test_two_cycle_rejected():
    stages = [StageSpec(s, 0.5, 256, 500) for s in "AB"]
    wf = WorkflowSpec("cyc", stages, [("A", "B"), ("B", "A")], qos_latency_ms=100)
    violations = validate_workflow(wf)
    assert any("cycle" in v for v in violations)


def test_ml_pipeline_fanout_join_valid():
    # detect -> {vehicle, human} -> join, the parking-lot pipeline shape
    stages = [StageSpec(s, 0.5, 256, 500) for s in ["detect", "vehicle", "human", "join"]]
    wf = WorkflowSpec(
        "mlpipe",
        stages,
        [("detect", "vehicle"), ("detect", "human"), ("vehicle", "join"), ("human", "join")],
        qos_latency_ms=3000,
    )
    assert validate_workflow(wf) == []
    assert wf.roots == ("detect",)


def test_unknown_edge_endpoint():
    wf = WorkflowSpec("bad", [StageSpec("A", 0.5, 256, 500)], [("A", "Z")], qos_latency_ms=10)
    assert any("unknown stage 'Z'" in v for v in validate_workflow(wf))


def test_bad_stage_fields_raise():
    with pytest.raises(ValueError):
        StageSpec("A", compute_work=0.0, working_set_mb=256, cold_init_ms=500)
    with pytest.raises(ValueError):
        StageSpec("A", compute_work=1.0, working_set_mb=0.5, cold_init_ms=500)
    with pytest.raises(ValueError):
        StageSpec("A", compute_work=1.0, working_set_mb=256, cold_init_ms=500, exec_noise_std=1.0)


def test_workflow_json_roundtrip():
    wf = chain3()
    again = WorkflowSpec.from_json(wf.to_json())
    assert again.id == wf.id
    assert again.stage_ids == wf.stage_ids
    assert again.edges == wf.edges
    assert again.qos_latency_ms == wf.qos_latency_ms


def one_stage(sid="A"):
    return WorkflowSpec("w1", [StageSpec(sid, 0.5, 256, 500)], [], qos_latency_ms=1000)


def test_enumerate_counts_one_stage():
    grid = GridSpec(cpu_values=(1.0, 2.0), mem_values=(128, 256), conc_values=(1,))
    configs = list(enumerate_config_space(one_stage(), grid))
    assert len(configs) == 4
    assert len({tuple(c.as_vector()) for c in configs}) == 4


def test_enumerate_counts_two_stages():
    grid = GridSpec(cpu_values=(1.0, 2.0), mem_values=(128, 256), conc_values=(1,))
    stages = [StageSpec(s, 0.5, 256, 500) for s in "AB"]
    wf = WorkflowSpec("w2", stages, [("A", "B")], qos_latency_ms=1000)
    assert len(list(enumerate_config_space(wf, grid))) == 16


def test_enumerate_refuses_large_space():
    grid = GridSpec()  # 16 * 32 * 5 = 2560 per stage
    wf = chain3()
    assert config_space_size(wf, grid) == 2560**3
    with pytest.raises(ConfigSpaceTooLarge):
        list(enumerate_config_space(wf, grid, cap=10**6))


def test_cost_examples():
    model = CostModel(1.0, 0.001)
    cfg = ResourceConfig({"A": StageResources(1.0, 128, 1)})
    assert cost_of(cfg, {"A": (2.0, 1024.0)}, model) == pytest.approx(3.024)
    assert cost_of(cfg, {"A": (0.0, 0.0)}, model) == 0.0
    cfg2 = ResourceConfig({"A": StageResources(1.0, 128, 1), "B": StageResources(1.0, 128, 1)})
    assert cost_of(cfg2, {"A": (1.0, 0.0), "B": (1.0, 0.0)}, model) == pytest.approx(2.0)


def test_cost_mismatched_stages():
    model = CostModel()
    cfg = ResourceConfig({"A": StageResources(1.0, 128, 1)})
    with pytest.raises(ValueError):
        cost_of(cfg, {"B": (1.0, 1.0)}, model)


@given(
    alpha=st.floats(0.0, 50.0),
    u1=st.tuples(st.floats(0, 100), st.floats(0, 1e5)),
    u2=st.tuples(st.floats(0, 100), st.floats(0, 1e5)),
)
def test_cost_linearity(alpha, u1, u2):
    model = CostModel(1.3, 0.002)
    cfg = ResourceConfig({"A": StageResources(1.0, 128, 1)})
    c1 = cost_of(cfg, {"A": u1}, model)
    c2 = cost_of(cfg, {"A": u2}, model)
    scaled = cost_of(cfg, {"A": (alpha * u1[0], alpha * u1[1])}, model)
    summed = cost_of(cfg, {"A": (u1[0] + u2[0], u1[1] + u2[1])}, model)
    assert scaled == pytest.approx(alpha * c1, rel=1e-9, abs=1e-9)
    assert summed == pytest.approx(c1 + c2, rel=1e-9, abs=1e-9)


def test_budget_positive():
    with pytest.raises(ValueError):
        BudgetSpec(max_total_cost=0, max_total_time_s=1, max_samples=1)
    b = BudgetSpec(10.0, 100.0, 5)
    assert b.max_samples == 5
