"""Container-level power attribution.

Two estimators share one pipeline: split the node meter reading into idle and
dynamic parts, hand the idle part out by reserved cores, and hand the dynamic
part out by some activity weight.

``KeplerRatioEstimator``
    Captures a fixed idle estimate once, at start-up, and weights dynamic
    power by CPU time for *both* PKG and DRAM.
``ResourceCentricEstimator``
    Re-derives idle power every window from per-core C-state residency,
    weights PKG by ``V(f)^2 * f * u`` and DRAM by memory bandwidth.

Native processes (no container identity) are pooled into a single
``system_processes`` entry, so the attributed totals always add up to the
node totals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigurationError, InputDomainError
from .simnode import SocketSpec
from .telemetry import CoreSample, PowerSample, UsageSample

SYSTEM_PROCESSES = "system_processes"


@dataclass(frozen=True)
class UsageStats:
    """Window-mean usage of one container (or the pooled native processes)."""

    cpu_fraction: float
    cycles: float
    bandwidth: float
    requested_cores: float
    core_id: int | None
    native: bool = False
    active: bool = True


@dataclass(frozen=True)
class CoreStats:
    frequency: float
    residency: tuple[float, float, float, float]
    socket_id: int


@dataclass(frozen=True)
class Window:
    """Everything an estimator may look at for one aggregation window.

    ``pkg``/``dram`` are node-wide meter means (all sockets).  Estimators
    never see per-core power.
    """

    t0: int
    t1: int
    pkg: float
    dram: float
    usage: Mapping[str, UsageStats]
    cores: Mapping[int, CoreStats]

    @classmethod
    def from_samples(
        cls,
        power: Sequence[PowerSample],
        usage: Sequence[UsageSample],
        cores: Sequence[CoreSample],
    ) -> "Window":
        ticks = sorted({p.t for p in power})
        if not ticks:
            raise InputDomainError("window has no power samples")
        n = len(ticks)
        pkg = math.fsum(p.pkg for p in power) / n
        dram = math.fsum(p.dram for p in power) / n

        grouped: dict[str, list[UsageSample]] = {}
        for s in usage:
            grouped.setdefault(s.container_id, []).append(s)
        stats = {}
        for name in sorted(grouped):
            ss = grouped[name]
            stats[name] = UsageStats(
                cpu_fraction=math.fsum(s.cpu_fraction for s in ss) / n,
                cycles=math.fsum(s.cycles for s in ss) / n,
                bandwidth=math.fsum(s.bandwidth for s in ss) / n,
                requested_cores=ss[-1].requested_cores,
                core_id=ss[-1].core_id,
                native=ss[-1].native,
                active=ss[-1].active,
            )

        by_core: dict[int, list[CoreSample]] = {}
        for c in cores:
            by_core.setdefault(c.core_id, []).append(c)
        core_stats = {}
        for cid in sorted(by_core):
            cs = by_core[cid]
            m = len(cs)
            res = tuple(math.fsum(c.residency[i] for c in cs) / m for i in range(4))
            core_stats[cid] = CoreStats(
                frequency=math.fsum(c.frequency for c in cs) / m,
                residency=res,
                socket_id=cs[0].socket_id,
            )
        return cls(ticks[0], ticks[-1] + 1, pkg, dram, stats, core_stats)

    def containers(self) -> dict[str, UsageStats]:
        return {k: v for k, v in self.usage.items() if not v.native}

    def natives(self) -> dict[str, UsageStats]:
        return {k: v for k, v in self.usage.items() if v.native}


@dataclass(frozen=True)
class ContainerPower:
    idle_pkg: float = 0.0
    dyn_pkg: float = 0.0
    idle_dram: float = 0.0
    dyn_dram: float = 0.0


@dataclass(frozen=True)
class AttributionResult:
    mode: str
    containers: Mapping[str, ContainerPower]
    node_idle_pkg: float
    node_dyn_pkg: float
    node_idle_dram: float
    node_dyn_dram: float
    t0: int = 0
    t1: int = 0

    def __getitem__(self, name: str) -> ContainerPower:
        return self.containers[name]


@dataclass(frozen=True)
class EstimatorConfig:
    mode: Literal["kepler_ratio", "resource_centric"] = "kepler_ratio"
    fixed_idle_pkg: float | None = None
    fixed_idle_dram: float | None = None
    idle_underestimate_beta_pkg: float = 0.6
    idle_underestimate_beta_dram: float = 0.2
    window: int = 30

    def __post_init__(self):
        if self.mode not in ("kepler_ratio", "resource_centric"):
            raise ConfigurationError(f"unknown estimator mode {self.mode!r}")
        for b in (self.idle_underestimate_beta_pkg, self.idle_underestimate_beta_dram):
            if not 0.0 < b <= 1.0:
                raise ConfigurationError(f"beta must lie in (0, 1], got {b}")
        if self.window < 1:
            raise ConfigurationError("window must be >= 1 s")


# -- building blocks --------------------------------------------------------


def split_node_power(total: float, fixed_idle: float) -> tuple[float, float]:
    """Split a node reading into ``(idle, dynamic)`` around a fixed idle level."""
    if total < 0:
        raise InputDomainError(f"negative node power {total}")
    return min(total, fixed_idle), max(total - fixed_idle, 0.0)


def allocate_idle(deployments: Mapping[str, UsageStats], node_idle: float, total_cores: float) -> dict[str, float]:
    """Share idle power by reserved cores; only active containers get any."""
    if total_cores <= 0:
        raise ConfigurationError("total_cores must be positive")
    out = {}
    for name, d in deployments.items():
        if d.requested_cores > total_cores:
            raise ConfigurationError(f"{name} requests more cores than the node has")
        out[name] = node_idle * d.requested_cores / total_cores if d.active else 0.0
    return out


def _weights(values: Mapping[str, float]) -> tuple[list[str], np.ndarray]:
    names = list(values)
    if not names:
        return names, np.zeros(0)
    arr = check_array(
        np.asarray([values[n] for n in names], dtype=float), ensure_2d=False, input_name="usage"
    )
    if (arr < 0).any():
        raise InputDomainError("usage weights must be non-negative")
    return names, arr


def _proportional(values: Mapping[str, float], total: float) -> dict[str, float]:
    names, w = _weights(values)
    s = w.sum()
    if s == 0:
        return {n: 0.0 for n in names}
    return {n: float(total * wi / s) for n, wi in zip(names, w)}


def allocate_dynamic_ratio(usages: Mapping[str, float], node_dyn: float, domain: str = "pkg") -> dict[str, float]:
    """Share ``node_dyn`` in proportion to CPU fraction.

    ``domain`` is accepted for symmetry only: DRAM is split by CPU time too.
    """
    if domain not in ("pkg", "dram"):
        raise InputDomainError(f"unknown domain {domain!r}")
    if node_dyn < 0:
        raise InputDomainError("node dynamic power must be >= 0")
    return _proportional(usages, node_dyn)


def allocate_dynamic_resource_centric(
    usages: Mapping[str, UsageStats],
    node_dyn_pkg: float,
    node_dyn_dram: float,
    frequencies: Mapping[int, float],
    spec: SocketSpec,
) -> dict[str, tuple[float, float]]:
    """PKG by frequency/voltage-weighted busy time, DRAM by bandwidth."""
    pkg_w, dram_w = {}, {}
    for name, u in usages.items():
        if u.core_id is None or u.core_id not in frequencies:
            raise ConfigurationError(f"{name} has no core mapping")
        f = frequencies[u.core_id]
        v = spec.dvfs.voltage(f)
        pkg_w[name] = v * v * f * u.cpu_fraction
        dram_w[name] = u.bandwidth
    pkg = _proportional(pkg_w, node_dyn_pkg)
    dram = _proportional(dram_w, node_dyn_dram)
    return {n: (pkg[n], dram[n]) for n in usages}


def idle_from_residency(cores: Mapping[int, CoreStats], spec: SocketSpec) -> tuple[float, float]:
    """Node idle (pkg, dram) implied by current per-core C-state residency."""
    sockets = sorted({c.socket_id for c in cores.values()})
    core_static = math.fsum(
        spec.static_per_core_c0 * math.fsum(r * k for r, k in zip(c.residency, spec.cstates.leak_factors))
        for c in cores.values()
    )
    return core_static + spec.uncore_power * len(sockets), spec.dram_static * len(sockets)


def _pool_natives(window: Window) -> dict[str, UsageStats]:
    """Containers plus one pooled entry for all native processes."""
    out = dict(window.containers())
    natives = window.natives()
    out[SYSTEM_PROCESSES] = UsageStats(
        cpu_fraction=math.fsum(n.cpu_fraction for n in natives.values()),
        cycles=math.fsum(n.cycles for n in natives.values()),
        bandwidth=math.fsum(n.bandwidth for n in natives.values()),
        requested_cores=0,
        core_id=None,
        native=True,
    )
    return out


def _idle_with_remainder(window: Window, node_idle: float) -> dict[str, float]:
    idle = allocate_idle(window.containers(), node_idle, len(window.cores))
    idle[SYSTEM_PROCESSES] = node_idle - math.fsum(idle.values())
    return idle


# -- estimators -------------------------------------------------------------


def _startup_array(X) -> np.ndarray:
    if isinstance(X, Window):
        return np.array([[X.pkg, X.dram]])
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], Window):
        return np.array([[w.pkg, w.dram] for w in X])
    return check_array(X, ensure_min_samples=1)


class KeplerRatioEstimator(BaseEstimator):
    """Ratio model with an idle level frozen at start-up.

    Parameters
    ----------
    beta_pkg, beta_dram : float in (0, 1]
        Fraction of the start-up reading kept as the fixed idle estimate.
        Values below 1 leave part of the true idle power in the dynamic pool.
    window : int
        Aggregation window in seconds.
    """

    mode = "kepler_ratio"

    def __init__(self, beta_pkg=0.6, beta_dram=0.2, window=30):
        self.beta_pkg = beta_pkg
        self.beta_dram = beta_dram
        self.window = window

    def fit(self, X, y=None):
        """Capture the fixed idle estimate.

        ``X`` holds node ``(pkg, dram)`` readings taken on a quiescent node
        with C-states disabled, as an ``(n, 2)`` array or a list of windows.
        """
        EstimatorConfig("kepler_ratio", None, None, self.beta_pkg, self.beta_dram, self.window)
        arr = _startup_array(X)
        if arr.shape[1] != 2:
            raise InputDomainError("start-up readings must have two columns (pkg, dram)")
        self.fixed_idle_pkg_ = float(self.beta_pkg * arr[:, 0].mean())
        self.fixed_idle_dram_ = float(self.beta_dram * arr[:, 1].mean())
        return self

    def predict(self, window: Window) -> AttributionResult:
        check_is_fitted(self, ["fixed_idle_pkg_", "fixed_idle_dram_"])
        return _kepler_ratio(window, self.fixed_idle_pkg_, self.fixed_idle_dram_)


class ResourceCentricEstimator(BaseEstimator):
    """Per-window idle from residency, activity-weighted dynamic shares.

    Needs a characterised ``socket_spec`` (static leakage, leak factors,
    uncore and DRAM static power, voltage curve) for the hardware it runs on.
    """

    mode = "resource_centric"

    def __init__(self, socket_spec=None, window=30):
        self.socket_spec = socket_spec
        self.window = window

    def fit(self, X=None, y=None):
        if not isinstance(self.socket_spec, SocketSpec):
            raise ConfigurationError("resource_centric estimation needs a SocketSpec")
        if self.window < 1:
            raise ConfigurationError("window must be >= 1 s")
        self.spec_ = self.socket_spec
        return self

    def predict(self, window: Window) -> AttributionResult:
        check_is_fitted(self, "spec_")
        return _resource_centric(window, self.spec_)


def _kepler_ratio(window: Window, fixed_idle_pkg: float, fixed_idle_dram: float) -> AttributionResult:
    idle_pkg, dyn_pkg = split_node_power(window.pkg, fixed_idle_pkg)
    idle_dram, dyn_dram = split_node_power(window.dram, fixed_idle_dram)
    pooled = _pool_natives(window)
    cpu = {n: u.cpu_fraction for n, u in pooled.items()}
    share_pkg = allocate_dynamic_ratio(cpu, dyn_pkg, "pkg")
    share_dram = allocate_dynamic_ratio(cpu, dyn_dram, "dram")
    ip = _idle_with_remainder(window, idle_pkg)
    idr = _idle_with_remainder(window, idle_dram)
    containers = {
        n: ContainerPower(ip[n], share_pkg[n], idr[n], share_dram[n]) for n in pooled
    }
    return AttributionResult("kepler_ratio", containers, idle_pkg, dyn_pkg, idle_dram, dyn_dram, window.t0, window.t1)


def _resource_centric(window: Window, spec: SocketSpec) -> AttributionResult:
    est_idle_pkg, est_idle_dram = idle_from_residency(window.cores, spec)
    idle_pkg, dyn_pkg = split_node_power(window.pkg, est_idle_pkg)
    idle_dram, dyn_dram = split_node_power(window.dram, est_idle_dram)

    freqs = {cid: c.frequency for cid, c in window.cores.items()}
    entries = dict(window.containers())
    # natives are weighted per process (their cores differ), then pooled
    natives = window.natives()
    entries.update(natives)
    shares = allocate_dynamic_resource_centric(entries, dyn_pkg, dyn_dram, freqs, spec)

    ip = _idle_with_remainder(window, idle_pkg)
    idr = _idle_with_remainder(window, idle_dram)
    containers = {
        n: ContainerPower(ip[n], shares[n][0], idr[n], shares[n][1]) for n in window.containers()
    }
    containers[SYSTEM_PROCESSES] = ContainerPower(
        ip[SYSTEM_PROCESSES],
        math.fsum(shares[n][0] for n in natives),
        idr[SYSTEM_PROCESSES],
        math.fsum(shares[n][1] for n in natives),
    )
    return AttributionResult("resource_centric", containers, idle_pkg, dyn_pkg, idle_dram, dyn_dram, window.t0, window.t1)


def make_estimator(config: EstimatorConfig, socket_spec: SocketSpec | None = None):
    if config.mode == "kepler_ratio":
        return KeplerRatioEstimator(config.idle_underestimate_beta_pkg, config.idle_underestimate_beta_dram, config.window)
    return ResourceCentricEstimator(socket_spec, config.window)


def estimate(window: Window, config: EstimatorConfig, socket_spec: SocketSpec | None = None) -> AttributionResult:
    """One-shot attribution of a window under ``config``.

    ``kepler_ratio`` needs ``config.fixed_idle_pkg``/``fixed_idle_dram`` to be
    set (the values an estimator captured at start-up).
    """
    if config.mode == "kepler_ratio":
        if config.fixed_idle_pkg is None or config.fixed_idle_dram is None:
            raise ConfigurationError("kepler_ratio needs fixed idle levels captured at start-up")
        return _kepler_ratio(window, config.fixed_idle_pkg, config.fixed_idle_dram)
    if socket_spec is None:
        raise ConfigurationError("resource_centric estimation needs a SocketSpec")
    return _resource_centric(window, socket_spec)
