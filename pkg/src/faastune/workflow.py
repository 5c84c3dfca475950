"""Workflow DAGs, the discrete resource-configuration space, QoS targets and cost model.

Everything here is an immutable value object; the simulator and the optimizer
share these types without copying.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

__all__ = [
    "StageSpec",
    "WorkflowSpec",
    "ResourceConfig",
    "GridSpec",
    "CostModel",
    "BudgetSpec",
    "validate_workflow",
    "enumerate_config_space",
    "config_space_size",
    "cost_of",
    "ConfigSpaceTooLarge",
]


class ConfigSpaceTooLarge(ValueError):
    """Raised when exhaustive enumeration would exceed the caller's cap."""


@dataclass(frozen=True)
class StageSpec:
    """One function stage: ground-truth performance-model parameters.

    compute_work is CPU-seconds at 1.0 cores; execution speeds up with more
    cores until ``cpu_saturation`` and slows down when memory_mb is below the
    working set (thrashing factor working_set_mb / memory_mb).
    """

    id: str
    compute_work: float
    working_set_mb: float
    cold_init_ms: float
    exec_noise_std: float = 0.0
    output_size_kb: float = 0.0
    cpu_saturation: float = 2.0

    def __post_init__(self):
        if self.compute_work <= 0:
            raise ValueError(f"stage {self.id}: compute_work must be > 0")
        if self.working_set_mb < 1:
            raise ValueError(f"stage {self.id}: working_set_mb must be >= 1")
        if self.cold_init_ms < 0:
            raise ValueError(f"stage {self.id}: cold_init_ms must be >= 0")
        if not 0 <= self.exec_noise_std < 1:
            raise ValueError(f"stage {self.id}: exec_noise_std must be in [0, 1)")
        if self.cpu_saturation <= 0:
            raise ValueError(f"stage {self.id}: cpu_saturation must be > 0")


@dataclass(frozen=True)
class WorkflowSpec:
    """A DAG of stages with an end-to-end latency target (ms)."""

    id: str
    stages: tuple[StageSpec, ...]
    edges: tuple[tuple[str, str], ...]
    qos_latency_ms: float

    def __init__(self, id, stages, edges, qos_latency_ms):
        object.__setattr__(self, "id", id)
        object.__setattr__(self, "stages", tuple(stages))
        object.__setattr__(self, "edges", tuple((u, v) for u, v in edges))
        object.__setattr__(self, "qos_latency_ms", float(qos_latency_ms))

    def stage(self, stage_id: str) -> StageSpec:
        for s in self.stages:
            if s.id == stage_id:
                return s
        raise KeyError(stage_id)

    @property
    def stage_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.stages)

    def upstreams(self, stage_id: str) -> tuple[str, ...]:
        return tuple(u for u, v in self.edges if v == stage_id)

    def downstreams(self, stage_id: str) -> tuple[str, ...]:
        return tuple(v for u, v in self.edges if u == stage_id)

    @property
    def roots(self) -> tuple[str, ...]:
        """Entry stages: in-degree zero."""
        targets = {v for _, v in self.edges}
        return tuple(s.id for s in self.stages if s.id not in targets)

    def topo_order(self) -> tuple[str, ...]:
        """Kahn topological order; raises ValueError on a cycle."""
        indeg = {s.id: 0 for s in self.stages}
        for _, v in self.edges:
            indeg[v] += 1
        ready = [sid for sid in self.stage_ids if indeg[sid] == 0]
        order = []
        while ready:
            sid = ready.pop(0)
            order.append(sid)
            for v in self.downstreams(sid):
                indeg[v] -= 1
                if indeg[v] == 0:
                    ready.append(v)
        if len(order) != len(self.stages):
            raise ValueError(f"workflow {self.id}: edges contain a cycle")
        return tuple(order)

    def to_json(self) -> str:
        doc = {
            "id": self.id,
            "stages": [
                {
                    "id": s.id,
                    "compute_work": s.compute_work,
                    "working_set_mb": s.working_set_mb,
                    "cold_init_ms": s.cold_init_ms,
                    "exec_noise_std": s.exec_noise_std,
                    "output_size_kb": s.output_size_kb,
                }
                for s in self.stages
            ],
            "edges": [[u, v] for u, v in self.edges],
            "qos_latency_ms": self.qos_latency_ms,
        }
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "WorkflowSpec":
        doc = json.loads(text)
        stages = [
            StageSpec(
                id=s["id"],
                compute_work=s["compute_work"],
                working_set_mb=s["working_set_mb"],
                cold_init_ms=s["cold_init_ms"],
                exec_noise_std=s.get("exec_noise_std", 0.0),
                output_size_kb=s.get("output_size_kb", 0.0),
                cpu_saturation=s.get("cpu_saturation", 2.0),
            )
            for s in doc["stages"]
        ]
        return WorkflowSpec(
            id=doc["id"],
            stages=stages,
            edges=[tuple(e) for e in doc["edges"]],
            qos_latency_ms=doc["qos_latency_ms"],
        )


def _grid(start: float, stop: float, step: float) -> tuple[float, ...]:
    n = round((stop - start) / step) + 1
    return tuple(round(start + i * step, 6) for i in range(n))


# Defaults mirror common FaaS offerings while keeping oracle enumeration
# feasible for 1-3 stage workflows.
DEFAULT_CPU_GRID = _grid(0.25, 4.0, 0.25)
DEFAULT_MEM_GRID = tuple(range(128, 4096 + 1, 128))
DEFAULT_CONC_GRID = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class GridSpec:
    """Per-dimension discrete values the optimizer may pick from."""

    cpu_values: tuple[float, ...] = DEFAULT_CPU_GRID
    mem_values: tuple[int, ...] = DEFAULT_MEM_GRID
    conc_values: tuple[int, ...] = DEFAULT_CONC_GRID

    def __post_init__(self):
        if not (self.cpu_values and self.mem_values and self.conc_values):
            raise ValueError("grid dimensions must be non-empty")

    @property
    def per_stage_count(self) -> int:
        return len(self.cpu_values) * len(self.mem_values) * len(self.conc_values)


@dataclass(frozen=True)
class StageResources:
    cpu_shares: float
    memory_mb: int
    concurrency: int


@dataclass(frozen=True)
class ResourceConfig:
    """Per-stage (cpu_shares, memory_mb, concurrency) assignment; the search point."""

    assignments: tuple[tuple[str, StageResources], ...]

    def __init__(self, assignments):
        if isinstance(assignments, dict):
            items = tuple(assignments.items())
        else:
            items = tuple(assignments)
        norm = []
        for sid, res in items:
            if not isinstance(res, StageResources):
                res = StageResources(*res)
            norm.append((sid, res))
        object.__setattr__(self, "assignments", tuple(norm))

    def __getitem__(self, stage_id: str) -> StageResources:
        for sid, res in self.assignments:
            if sid == stage_id:
                return res
        raise KeyError(stage_id)

    @property
    def stage_ids(self) -> tuple[str, ...]:
        return tuple(sid for sid, _ in self.assignments)

    def as_vector(self) -> list[float]:
        """Flat [cpu, mem, conc] per stage, in assignment order."""
        out = []
        for _, r in self.assignments:
            out.extend([r.cpu_shares, float(r.memory_mb), float(r.concurrency)])
        return out

    def to_json(self) -> str:
        return json.dumps(
            {sid: [r.cpu_shares, r.memory_mb, r.concurrency] for sid, r in self.assignments}
        )


@dataclass(frozen=True)
class CostModel:
    """Linear pricing: cost = cpu_seconds * price_cpu + mb_seconds * price_mb."""

    price_per_cpu_second: float = 1.0
    price_per_mb_second: float = 0.001

    def __post_init__(self):
        if self.price_per_cpu_second <= 0 or self.price_per_mb_second <= 0:
            raise ValueError("prices must be > 0")


@dataclass(frozen=True)
class BudgetSpec:
    """Sampling budget: total cost units, total sampled wall-time, sample count."""

    max_total_cost: float
    max_total_time_s: float
    max_samples: int

    def __post_init__(self):
        if self.max_total_cost <= 0 or self.max_total_time_s <= 0 or self.max_samples <= 0:
            raise ValueError("budget limits must be positive")


def validate_workflow(spec: WorkflowSpec) -> list[str]:
    """Return a list of invariant violations; empty list means the spec is valid."""
    violations: list[str] = []
    if not spec.stages:
        violations.append("workflow has no stages")
        return violations
    ids = [s.id for s in spec.stages]
    seen = set()
    for sid in ids:
        if sid in seen:
            violations.append(f"duplicate stage id '{sid}'")
        seen.add(sid)
    for u, v in spec.edges:
        for end in (u, v):
            if end not in seen:
                violations.append(f"edge ({u}, {v}) references unknown stage '{end}'")
    if spec.qos_latency_ms <= 0:
        violations.append("qos_latency_ms must be > 0")
    # Cycle check only over well-formed edges.
    if not any(v.startswith("edge") for v in violations):
        try:
            spec.topo_order()
        except ValueError:
            violations.append("cycle: edges do not form a DAG")
        else:
            if not spec.roots:
                violations.append("no entry stage with in-degree 0")
    return violations


def config_space_size(spec: WorkflowSpec, grid: GridSpec) -> int:
    return grid.per_stage_count ** len(spec.stages)


def enumerate_config_space(spec: WorkflowSpec, grid: GridSpec, cap: int = 1_000_000):
    """Yield every config in the Cartesian product of per-stage grids.

    Refuses up front when the total count exceeds ``cap``; used by the
    brute-force oracle, which must stay desk-scale.
    """
    total = config_space_size(spec, grid)
    if total > cap:
        raise ConfigSpaceTooLarge(
            f"config space too large: {total} configs exceed cap {cap}"
        )
    per_stage = list(itertools.product(grid.cpu_values, grid.mem_values, grid.conc_values))
    sids = spec.stage_ids
    for combo in itertools.product(per_stage, repeat=len(sids)):
        yield ResourceConfig(
            [(sid, StageResources(cpu, mem, conc)) for sid, (cpu, mem, conc) in zip(sids, combo)]
        )


def cost_of(config: ResourceConfig, usage: dict[str, tuple[float, float]], model: CostModel) -> float:
    """Linear cost of per-stage (cpu_seconds, mb_seconds) usage."""
    if set(usage) != set(config.stage_ids):
        raise ValueError(
            f"usage stages {sorted(usage)} do not match config stages {sorted(config.stage_ids)}"
        )
    total = 0.0
    for sid in config.stage_ids:
        cpu_s, mb_s = usage[sid]
        total += cpu_s * model.price_per_cpu_second + mb_s * model.price_per_mb_second
    return total
