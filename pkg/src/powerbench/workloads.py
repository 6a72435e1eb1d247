"""Workload models: the closed-loop stressor service, co-runners, monitors.

Requests are served one at a time.  Each request needs a fixed number of
cycles plus a fixed non-compute overhead, so at frequency ``f``

    busy fraction = (cycles / f) / (cycles / f + overhead)

which falls as the core gets faster.  Per-tick usage is the time-average of
that closed loop; sub-second request boundaries are not resolved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

from .errors import CalibrationError, ConfigurationError, InputDomainError
from .simnode import Activity, NodeState
from .telemetry import UsageSample

Kind = Literal["cpu_bound", "memory_bound", "mixed"]


@dataclass(frozen=True)
class WorkloadSpec:
    kind: Kind = "cpu_bound"
    cycles_per_request: float = 2.125
    bandwidth_active: float = 0.1
    overhead_per_request: float = 1.0

    def __post_init__(self):
        if self.kind not in ("cpu_bound", "memory_bound", "mixed"):
            raise InputDomainError(f"unknown workload kind {self.kind!r}")
        if self.cycles_per_request <= 0:
            raise InputDomainError("cycles_per_request must be positive")
        if self.overhead_per_request < 0:
            raise InputDomainError("overhead_per_request must be >= 0")
        if self.bandwidth_active < 0:
            raise InputDomainError("bandwidth_active must be >= 0")
        if self.kind == "cpu_bound" and self.bandwidth_active > 0.2:
            raise InputDomainError("cpu_bound workloads use at most 0.2 GB/s")
        if self.kind == "memory_bound" and self.bandwidth_active < 5.0:
            raise InputDomainError("memory_bound workloads use at least 5 GB/s")


@dataclass(frozen=True)
class ConstantLoad:
    """A process that keeps a fixed busy fraction and bandwidth."""

    utilization: float
    bandwidth: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.utilization <= 1.0:
            raise InputDomainError("utilization must lie in [0, 1]")
        if self.bandwidth < 0:
            raise InputDomainError("bandwidth must be >= 0")


@dataclass(frozen=True)
class ContainerDeployment:
    container_id: str
    namespace: str = "default"
    core_id: int = 0
    qos: Literal["guaranteed", "burstable"] = "guaranteed"
    memory_limit_mb: float | None = 2048
    requested_cores: float = 1
    lifecycle: Literal["active", "completed"] = "active"

    def __post_init__(self):
        if self.qos == "guaranteed":
            if self.requested_cores != 1:
                raise ConfigurationError(
                    f"{self.container_id}: guaranteed QoS pins exactly one core"
                )
            if not self.memory_limit_mb:
                raise ConfigurationError(f"{self.container_id}: guaranteed QoS needs a memory limit")
        elif self.qos != "burstable":
            raise ConfigurationError(f"{self.container_id}: unknown QoS class {self.qos!r}")
        if self.lifecycle not in ("active", "completed"):
            raise ConfigurationError(f"{self.container_id}: unknown lifecycle {self.lifecycle!r}")


@dataclass(frozen=True)
class RequestSchedule:
    """``request_count`` sequential requests starting at tick ``start``."""

    request_count: int = 100
    start: int = 0
    ticks: int = 0

    @classmethod
    def plan(cls, spec: WorkloadSpec, f: float, start: int, request_count: int = 100) -> "RequestSchedule":
        if request_count < 1:
            raise InputDomainError("request_count must be >= 1")
        latency = service_time(spec, f) + spec.overhead_per_request
        # whole ticks; the sub-second tail of the last request is folded in
        return cls(request_count, start, max(1, int(round(request_count * latency))))

    @property
    def end(self) -> int:
        return self.start + self.ticks

    def covers(self, tick: int) -> bool:
        return self.start <= tick < self.end


def service_time(spec: WorkloadSpec, f: float) -> float:
    """Compute time of one request, in seconds."""
    if f <= 0:
        raise InputDomainError(f"frequency must be positive, got {f}")
    return spec.cycles_per_request / f


def closed_loop_utilization(spec: WorkloadSpec, f: float) -> float:
    t_c = service_time(spec, f)
    return t_c / (t_c + spec.overhead_per_request)


def busy_seconds(spec: WorkloadSpec, f: float, t0: float, t1: float, request_count: int = 100) -> float:
    """Exact compute time inside ``[t0, t1)`` for a schedule starting at 0.

    Request ``i`` computes during ``[i*L, i*L + t_c)`` and then waits out the
    overhead, with ``L = t_c + overhead``.
    """
    if t1 < t0:
        raise InputDomainError("t1 must not precede t0")
    t_c = service_time(spec, f)
    period = t_c + spec.overhead_per_request
    first = max(int(math.floor(t0 / period)) - 1, 0)
    last = min(int(math.ceil(t1 / period)) + 1, request_count)
    busy = 0.0
    for i in range(first, last):
        a, b = i * period, i * period + t_c
        busy += max(0.0, min(b, t1) - max(a, t0))
    return busy


def calibrate_work_overhead(
    u_low: float, u_high: float, f_low: float, f_high: float, overhead: float = 1.0
) -> tuple[float, float]:
    """Solve ``(cycles_per_request, overhead)`` for a utilization band.

    Utilization is pinned exactly at ``f_low`` and must then land within
    0.01 of ``u_high`` at ``f_high``.  Only the cycles/overhead ratio is
    identifiable; ``overhead`` fixes the absolute scale.
    """
    if not (0.0 < u_high < u_low < 1.0):
        raise CalibrationError(
            f"need 0 < u_high < u_low < 1, got u_low={u_low}, u_high={u_high}",
            ["utilization_band"],
        )
    if not (0.0 < f_low < f_high):
        raise CalibrationError(f"need 0 < f_low < f_high, got {f_low}, {f_high}", ["utilization_band"])
    if overhead <= 0:
        raise CalibrationError("overhead scale must be positive", ["utilization_band"])
    # u = r / (r + f) with r = cycles / overhead
    ratio = u_low * f_low / (1.0 - u_low)
    cycles = ratio * overhead
    achieved = ratio / (ratio + f_high)
    if abs(achieved - u_high) > 0.01:
        raise CalibrationError(
            f"utilization at {f_high} GHz would be {achieved:.4f}, not {u_high} +/- 0.01",
            ["utilization_band"],
        )
    return cycles, overhead


def draw_monitor_usage(seed: int, names=("kepler", "prometheus", "grafana")) -> dict[str, float]:
    """Constant CPU fractions for the monitoring stack, drawn once from [0.02, 0.05]."""
    rng = np.random.default_rng([seed, 0x6D6F6E])
    return {n: float(u) for n, u in zip(names, rng.uniform(0.02, 0.05, size=len(names)))}


@dataclass
class Tenant:
    name: str
    core_id: int
    load: WorkloadSpec | ConstantLoad
    deployment: ContainerDeployment | None = None
    until: int | None = None

    @property
    def native(self) -> bool:
        return self.deployment is None

    @property
    def exclusive(self) -> bool:
        return self.native or self.deployment.qos == "guaranteed"


@dataclass
class WorkloadSet:
    """Everything running on the node, plus open request schedules."""

    tenants: dict[str, Tenant] = field(default_factory=dict)
    schedules: dict[str, RequestSchedule] = field(default_factory=dict)

    def deploy(self, deployment: ContainerDeployment, load, until: int | None = None) -> None:
        if deployment.container_id in self.tenants:
            raise ConfigurationError(f"{deployment.container_id} already deployed")
        self.tenants[deployment.container_id] = Tenant(
            deployment.container_id, deployment.core_id, load, deployment, until
        )

    def launch_native(self, name: str, core_id: int, load: ConstantLoad) -> None:
        if name in self.tenants:
            raise ConfigurationError(f"{name} already running")
        self.tenants[name] = Tenant(name, core_id, load)

    def start_requests(self, name: str, schedule: RequestSchedule) -> None:
        tenant = self.tenants.get(name)
        if tenant is None or not isinstance(tenant.load, WorkloadSpec):
            raise ConfigurationError(f"{name} is not a request-driven service")
        self.schedules[name] = schedule

    def stop_requests(self, name: str) -> None:
        self.schedules.pop(name, None)

    def occupied_cores(self) -> set[int]:
        return {t.core_id for t in self.tenants.values()}

    def check_pinning(self) -> None:
        by_core: dict[int, list[Tenant]] = {}
        for t in self.tenants.values():
            by_core.setdefault(t.core_id, []).append(t)
        for core, ts in by_core.items():
            if len(ts) > 1 and any(t.exclusive for t in ts):
                names = ", ".join(sorted(t.name for t in ts))
                raise ConfigurationError(f"core {core} is pinned by more than one workload: {names}")

    def lifecycle(self, name: str, tick: int) -> str:
        t = self.tenants[name]
        if t.deployment is not None and t.deployment.lifecycle == "completed":
            return "completed"
        if t.until is not None and tick >= t.until:
            return "completed"
        return "active"


def step_workloads(workloads: WorkloadSet, state: NodeState, tick: int) -> list[UsageSample]:
    """Usage of every tenant for one tick, at the core frequencies in ``state``."""
    workloads.check_pinning()
    out = []
    for name in sorted(workloads.tenants):
        t = workloads.tenants[name]
        core = state.core(t.core_id)
        active = workloads.lifecycle(name, tick) == "active"
        if not active:
            u, bw = 0.0, 0.0
        elif isinstance(t.load, ConstantLoad):
            u, bw = t.load.utilization, t.load.bandwidth
        else:
            sched = workloads.schedules.get(name)
            if sched is not None and sched.covers(tick):
                u = closed_loop_utilization(t.load, core.frequency)
                bw = u * t.load.bandwidth_active
            else:
                u, bw = 0.0, 0.0
        req = t.deployment.requested_cores if t.deployment is not None else 0
        out.append(
            UsageSample(
                t=tick,
                container_id=name,
                cpu_fraction=u,
                cycles=u * core.frequency,
                bandwidth=bw,
                requested_cores=req,
                core_id=t.core_id,
                native=t.native,
                active=active,
            )
        )
    return out


def place_usage(state: NodeState, usages: Iterable[UsageSample]) -> NodeState:
    """Load ``state`` with the activity described by ``usages``."""
    placement: dict[int, list[Activity]] = {}
    for s in usages:
        placement.setdefault(s.core_id, []).append(
            Activity(s.container_id, s.cpu_fraction, s.bandwidth, native=s.native)
        )
    return state.with_activities(placement)
