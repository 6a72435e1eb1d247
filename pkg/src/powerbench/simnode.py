"""Simulated multi-socket server power model.

Each socket is described by a :class:`SocketSpec`; the run-time state of every
core (frequency, C-state policy, the work placed on it) lives in an immutable
:class:`NodeState`.  Power is computed per socket as

    pkg  = sum(core dynamic) + sum(core static) + uncore
    dram = dram static + dram_bw_coeff * bandwidth

with core dynamic power ``k_cap * V(f)^2 * f * u`` and core static power the
C0 leakage scaled by the residency-weighted leak factor of the core.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import InputDomainError, InvariantViolation, NotFound

CSTATES = ("C0", "C1", "C3", "C6")
_TOL = 1e-9


@dataclass(frozen=True)
class DvfsModel:
    """Voltage/frequency curve and switched-capacitance coefficient.

    Voltage is linear in frequency: ``V(f) = v0 + v_slope * (f - f_min)``.
    ``k_cap`` is in watts per (V^2 * GHz).
    """

    f_min: float = 1.0
    f_max: float = 2.6
    f_step: float = 0.2
    v0: float = 0.6
    v_slope: float = 0.25
    k_cap: float = 2.2236

    def __post_init__(self):
        if not self.f_min < self.f_max:
            raise InputDomainError(f"f_min ({self.f_min}) must be below f_max ({self.f_max})")
        if self.f_step <= 0:
            raise InputDomainError("f_step must be positive")
        if self.v_slope <= 0 or self.v0 <= 0:
            raise InputDomainError("voltage curve must be positive and strictly increasing")
        if self.k_cap <= 0:
            raise InputDomainError("k_cap must be positive")
        n = (self.f_max - self.f_min) / self.f_step
        if abs(n - round(n)) > 1e-6:
            raise InputDomainError("f_max - f_min must be a multiple of f_step")

    def voltage(self, f: float) -> float:
        return self.v0 + self.v_slope * (f - self.f_min)

    def grid(self) -> tuple[float, ...]:
        n = int(round((self.f_max - self.f_min) / self.f_step))
        return tuple(round(self.f_min + i * self.f_step, 10) for i in range(n + 1))

    def on_grid(self, f: float) -> bool:
        if not (self.f_min - _TOL <= f <= self.f_max + _TOL):
            return False
        i = (f - self.f_min) / self.f_step
        return abs(i - round(i)) <= 1e-6

    def check(self, f: float) -> float:
        if not self.on_grid(f):
            raise InputDomainError(
                f"frequency {f} GHz is not on the {self.f_min}-{self.f_max} GHz grid "
                f"(step {self.f_step})"
            )
        return f


@dataclass(frozen=True)
class CStateModel:
    """Leak factors for C0/C1/C3/C6 and the idle-time residency profile.

    ``idle_residency`` gives the share of *idle* time spent in C1, C3 and C6
    when C-states are enabled.
    """

    leak_factors: tuple[float, float, float, float] = (1.0, 0.55, 0.25, 0.05)
    idle_residency: tuple[float, float, float] = (0.1, 0.2, 0.7)

    def __post_init__(self):
        lf = tuple(float(x) for x in self.leak_factors)
        ir = tuple(float(x) for x in self.idle_residency)
        object.__setattr__(self, "leak_factors", lf)
        object.__setattr__(self, "idle_residency", ir)
        if len(lf) != 4 or len(ir) != 3:
            raise InputDomainError("expected 4 leak factors and 3 idle residency entries")
        if lf[0] != 1.0:
            raise InputDomainError("leak factor of C0 must be 1.0")
        if not all(0.0 <= x <= 1.0 for x in lf):
            raise InputDomainError("leak factors must lie in [0, 1]")
        if not all(a > b for a, b in zip(lf, lf[1:])):
            raise InputDomainError("leak factors must strictly decrease with depth")
        if any(x < 0 for x in ir) or abs(sum(ir) - 1.0) > _TOL:
            raise InputDomainError("idle residency profile must be non-negative and sum to 1")

    def residency(self, utilization: float, enabled: bool) -> tuple[float, float, float, float]:
        """Per-state time fractions for a core busy ``utilization`` of the tick."""
        if not enabled:
            return (1.0, 0.0, 0.0, 0.0)
        idle = 1.0 - utilization
        return (utilization,) + tuple(idle * r for r in self.idle_residency)

    def idle_leak(self) -> float:
        """Leak factor of a fully idle core with C-states enabled."""
        return sum(r * k for r, k in zip(self.idle_residency, self.leak_factors[1:]))


@dataclass(frozen=True)
class SocketSpec:
    core_count: int = 14
    dvfs: DvfsModel = field(default_factory=DvfsModel)
    cstates: CStateModel = field(default_factory=CStateModel)
    static_per_core_c0: float = 4.8
    uncore_freq: float = 2.4
    uncore_power: float = 10.0
    dram_static: float = 3.25
    dram_bw_coeff: float = 0.4

    def __post_init__(self):
        if self.core_count < 1:
            raise InputDomainError("core_count must be >= 1")
        for name in ("static_per_core_c0", "uncore_power", "dram_static", "dram_bw_coeff"):
            if getattr(self, name) < 0:
                raise InputDomainError(f"{name} must be non-negative")

    def idle_power(self) -> float:
        """PKG power with every core in C0 and no work."""
        return self.core_count * self.static_per_core_c0 + self.uncore_power

    def full_load_power(self) -> float:
        dyn = core_dynamic_power(self.dvfs, self.dvfs.f_max, 1.0)
        return self.idle_power() + self.core_count * dyn

    def idle_ratio(self) -> float:
        return self.idle_power() / self.full_load_power()


@dataclass(frozen=True)
class Activity:
    """Work placed on a core for one tick.

    ``native`` marks processes that run outside any container (co-runners,
    host background); they draw power but carry no container identity.
    """

    owner: str
    utilization: float
    bandwidth: float = 0.0
    native: bool = False


@dataclass(frozen=True)
class CoreState:
    core_id: int
    socket_id: int
    frequency: float
    cstates_enabled: bool = False
    activities: tuple[Activity, ...] = ()
    residency: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        u = self.utilization
        if not (-_TOL <= u <= 1.0 + _TOL):
            raise InvariantViolation(f"core {self.core_id}: utilization {u} outside [0, 1]")
        if any(a.utilization < 0 or a.bandwidth < 0 for a in self.activities):
            raise InvariantViolation(f"core {self.core_id}: negative activity")
        res = self.residency
        if len(res) != 4 or any(r < -_TOL for r in res) or abs(math.fsum(res) - 1.0) > _TOL:
            raise InvariantViolation(f"core {self.core_id}: residency {res} does not sum to 1")
        if not self.cstates_enabled and res[0] != 1.0:
            raise InvariantViolation(f"core {self.core_id}: C-states disabled but residency not 100% C0")

    @property
    def utilization(self) -> float:
        return math.fsum(a.utilization for a in self.activities)

    @property
    def bandwidth(self) -> float:
        return math.fsum(a.bandwidth for a in self.activities)

    @property
    def pinned_container(self) -> str | None:
        owners = [a.owner for a in self.activities if not a.native]
        return owners[0] if len(owners) == 1 else None


@dataclass(frozen=True)
class NodeState:
    sockets: tuple[SocketSpec, ...]
    cores: tuple[CoreState, ...]

    def __post_init__(self):
        ids = [c.core_id for c in self.cores]
        if ids != list(range(len(ids))):
            raise InvariantViolation("core ids must be 0..n-1 in order")
        expected = sum(s.core_count for s in self.sockets)
        if len(self.cores) != expected:
            raise InvariantViolation(f"expected {expected} cores, got {len(self.cores)}")
        for c in self.cores:
            if not 0 <= c.socket_id < len(self.sockets):
                raise InvariantViolation(f"core {c.core_id} on unknown socket {c.socket_id}")
            if not self.sockets[c.socket_id].dvfs.on_grid(c.frequency):
                raise InvariantViolation(f"core {c.core_id} frequency {c.frequency} off grid")

    @classmethod
    def build(cls, spec: SocketSpec, n_sockets: int = 2, frequency: float | None = None) -> "NodeState":
        """All cores idle, C-states off, at ``frequency`` (default f_max)."""
        f = spec.dvfs.f_max if frequency is None else spec.dvfs.check(frequency)
        cores = []
        for s in range(n_sockets):
            for _ in range(spec.core_count):
                cores.append(CoreState(core_id=len(cores), socket_id=s, frequency=f))
        return cls(sockets=(spec,) * n_sockets, cores=tuple(cores))

    def core(self, core_id: int) -> CoreState:
        if not 0 <= core_id < len(self.cores):
            raise InputDomainError(f"unknown core {core_id}")
        return self.cores[core_id]

    def socket_cores(self, socket_id: int) -> tuple[CoreState, ...]:
        if not 0 <= socket_id < len(self.sockets):
            raise NotFound(f"unknown socket {socket_id}")
        return tuple(c for c in self.cores if c.socket_id == socket_id)

    def with_activities(self, placement: Mapping[int, Sequence[Activity]]) -> "NodeState":
        """Replace the work on every core; cores missing from ``placement`` go idle.

        Residency is recomputed from the new utilization.
        """
        unknown = set(placement) - set(range(len(self.cores)))
        if unknown:
            raise InputDomainError(f"unknown cores {sorted(unknown)}")
        cores = []
        for c in self.cores:
            acts = tuple(placement.get(c.core_id, ()))
            u = math.fsum(a.utilization for a in acts)
            res = self.sockets[c.socket_id].cstates.residency(min(u, 1.0), c.cstates_enabled)
            cores.append(replace(c, activities=acts, residency=res))
        return replace(self, cores=tuple(cores))


@dataclass(frozen=True)
class PowerBreakdown:
    socket_id: int
    core_dynamic: tuple[float, ...]
    core_static: tuple[float, ...]
    uncore: float
    dram_static: float
    dram_dynamic: float
    pkg: float
    dram: float


def core_dynamic_power(dvfs: DvfsModel, f: float, u: float) -> float:
    """Dynamic power of one core at frequency ``f`` busy a fraction ``u``."""
    dvfs.check(f)
    if not (0.0 <= u <= 1.0 + _TOL):
        raise InputDomainError(f"utilization {u} outside [0, 1]")
    v = dvfs.voltage(f)
    return dvfs.k_cap * v * v * f * u


def core_static_power(spec: SocketSpec, core: CoreState) -> float:
    res = core.residency
    if abs(math.fsum(res) - 1.0) > _TOL:
        raise InvariantViolation(f"core {core.core_id}: residency does not sum to 1")
    return spec.static_per_core_c0 * math.fsum(r * k for r, k in zip(res, spec.cstates.leak_factors))


def dram_power(spec: SocketSpec, total_bandwidth: float) -> float:
    if total_bandwidth < 0:
        raise InputDomainError(f"negative bandwidth {total_bandwidth}")
    return spec.dram_static + spec.dram_bw_coeff * total_bandwidth


def socket_power(state: NodeState, socket_id: int) -> PowerBreakdown:
    cores = state.socket_cores(socket_id)
    spec = state.sockets[socket_id]
    dyn = tuple(core_dynamic_power(spec.dvfs, c.frequency, min(c.utilization, 1.0)) for c in cores)
    stat = tuple(core_static_power(spec, c) for c in cores)
    bw = math.fsum(c.bandwidth for c in cores)
    dram_dyn = dram_power(spec, bw) - spec.dram_static
    return PowerBreakdown(
        socket_id=socket_id,
        core_dynamic=dyn,
        core_static=stat,
        uncore=spec.uncore_power,
        dram_static=spec.dram_static,
        dram_dynamic=dram_dyn,
        pkg=math.fsum(dyn) + math.fsum(stat) + spec.uncore_power,
        dram=spec.dram_static + dram_dyn,
    )


def oracle_container_power(state: NodeState, container_id: str) -> tuple[float, float]:
    """True (pkg_dynamic, dram_dynamic) of a container pinned to one core.

    Depends only on the container's own core, so it is unaffected by anything
    happening elsewhere on the node.
    """
    hits = [
        (c, a)
        for c in state.cores
        for a in c.activities
        if a.owner == container_id and not a.native
    ]
    if not hits:
        raise NotFound(f"container {container_id!r} is not placed on any core")
    if len(hits) > 1:
        raise NotFound(f"container {container_id!r} is not pinned to exactly one core")
    core, act = hits[0]
    spec = state.sockets[core.socket_id]
    return (
        core_dynamic_power(spec.dvfs, core.frequency, act.utilization),
        spec.dram_bw_coeff * act.bandwidth,
    )


@dataclass(frozen=True)
class FrequencyChange:
    core_ids: tuple[int, ...]
    frequency: float


@dataclass(frozen=True)
class CStateChange:
    core_ids: tuple[int, ...]
    enabled: bool


@dataclass(frozen=True)
class UncoreChange:
    socket_id: int
    frequency: float


def apply_config(state: NodeState, change) -> NodeState:
    """Return a new state with a frequency, C-state or uncore setting applied."""
    if isinstance(change, UncoreChange):
        if not 0 <= change.socket_id < len(state.sockets):
            raise InputDomainError(f"unknown socket {change.socket_id}")
        spec = state.sockets[change.socket_id]
        if abs(change.frequency - spec.uncore_freq) > _TOL:
            raise InputDomainError(
                f"uncore frequency is fixed at {spec.uncore_freq} GHz; got {change.frequency}"
            )
        return state

    ids = _check_cores(state, change.core_ids)
    cores = list(state.cores)
    if isinstance(change, FrequencyChange):
        for i in ids:
            state.sockets[cores[i].socket_id].dvfs.check(change.frequency)
            cores[i] = replace(cores[i], frequency=_snap(state.sockets[cores[i].socket_id].dvfs, change.frequency))
    elif isinstance(change, CStateChange):
        for i in ids:
            c = cores[i]
            res = state.sockets[c.socket_id].cstates.residency(min(c.utilization, 1.0), change.enabled)
            cores[i] = replace(c, cstates_enabled=change.enabled, residency=res)
    else:
        raise InputDomainError(f"unsupported configuration change {change!r}")
    return replace(state, cores=tuple(cores))


def _check_cores(state: NodeState, core_ids: Iterable[int]) -> tuple[int, ...]:
    ids = tuple(core_ids)
    bad = [i for i in ids if not 0 <= i < len(state.cores)]
    if bad:
        raise InputDomainError(f"unknown cores {bad}")
    return ids


def _snap(dvfs: DvfsModel, f: float) -> float:
    i = round((f - dvfs.f_min) / dvfs.f_step)
    return round(dvfs.f_min + i * dvfs.f_step, 10)
