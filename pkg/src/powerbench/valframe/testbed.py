"""The validation protocol run against the simulated node.

A :class:`Testbed` owns one node, its workloads and the telemetry clock.  The
``run_*`` functions drive it through the step sequence

    settle -> baseline -> 100 requests -> settle

and turn the collected samples into a :class:`TestReport`.  Socket 0 is the
experimental socket; socket 1 only carries background system load.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..attribution import (
    SYSTEM_PROCESSES,
    AttributionResult,
    KeplerRatioEstimator,
    ResourceCentricEstimator,
    Window,
)
from ..errors import BaselineRejected, ConfigurationError, InvariantViolation
from ..simnode import (
    CStateChange,
    FrequencyChange,
    NodeState,
    PowerBreakdown,
    apply_config,
    oracle_container_power,
    socket_power,
)
from ..telemetry import CoreSample, PowerSample, UsageSample, sample_socket
from ..workloads import (
    ConstantLoad,
    ContainerDeployment,
    RequestSchedule,
    WorkloadSet,
    WorkloadSpec,
    draw_monitor_usage,
    place_usage,
    step_workloads,
)
from .results import BaselineStats, EstimatorStep, StepResult, TestReport
from .scenario import ScenarioConfig
from .stats import clean_outliers, compare, stability

STRESSOR = "stressor"
EXPERIMENT_SOCKET = 0
BASELINE_MAX_CV = 1.0  # percent
# windowed estimator series are short; quartiles of a handful of points are
# too coarse to call anything an outlier
MIN_CLEAN_POINTS = 20
_CONSERVATION_TOL = 1e-9


@dataclass(frozen=True)
class TickRecord:
    t: int
    power: tuple[PowerSample, ...]
    truth: tuple[PowerBreakdown, ...]
    usage: tuple[UsageSample, ...]
    cores: tuple[CoreSample, ...]
    oracle: tuple[float, float]
    host_bandwidth: float
    socket_bandwidth: float


class Testbed:
    """One simulated node with the monitoring stack and background load running."""

    __test__ = False

    def __init__(self, config: ScenarioConfig, stressor: WorkloadSpec | None = None):
        self.config = config
        self.state = NodeState.build(config.socket, config.sockets)
        self.workloads = WorkloadSet()
        self.tick = 0
        self.last_change = 0
        self._version = 0
        self._cache: dict = {}
        self.monitor_usage = draw_monitor_usage(config.noise.seed, config.monitors.names)
        self._deploy_static(stressor or config.stressor)

    def _deploy_static(self, stressor: WorkloadSpec) -> None:
        cfg = self.config
        lo, hi = cfg.monitors.usage_range
        for name, u in self.monitor_usage.items():
            # rescale the [0.02, 0.05] draw into the configured range
            u = lo + (u - 0.02) / 0.03 * (hi - lo)
            self.workloads.deploy(
                ContainerDeployment(
                    name,
                    namespace="monitoring",
                    core_id=cfg.monitor_core,
                    qos="burstable",
                    requested_cores=cfg.monitors.requested_cores,
                ),
                ConstantLoad(u, cfg.monitors.bandwidth),
            )
        n = cfg.socket.core_count
        per_core = cfg.background.total_utilization / n
        for s in range(1, cfg.sockets):
            for i in range(n):
                core = s * n + i
                self.workloads.launch_native(
                    f"system-{core}", core, ConstantLoad(per_core, cfg.background.bandwidth)
                )
        self.workloads.deploy(
            ContainerDeployment(STRESSOR, namespace="bench", core_id=cfg.host_core), stressor
        )

    # -- configuration ------------------------------------------------------

    def configure(self, change) -> None:
        self.state = apply_config(self.state, change)
        self._changed()

    def launch_corunner(self, name: str, core_id: int) -> None:
        c = self.config.corunner
        self.workloads.launch_native(name, core_id, ConstantLoad(c.utilization, c.bandwidth))
        self._changed()

    def deploy_batch(self, name: str, core_id: int, until: int) -> None:
        self.workloads.deploy(
            ContainerDeployment(name, namespace=self.config.batch.namespace, core_id=core_id),
            ConstantLoad(1.0, 0.05),
            until=until,
        )
        self._changed()

    def _changed(self) -> None:
        self._version += 1
        self.last_change = self.tick

    # -- clock --------------------------------------------------------------

    def _truth(self, usage: list[UsageSample]):
        key = (self._version, tuple((u.container_id, u.cpu_fraction, u.bandwidth, u.active) for u in usage))
        hit = self._cache.get(key)
        if hit is None:
            state = place_usage(self.state, usage)
            truth = tuple(socket_power(state, s) for s in range(len(state.sockets)))
            for b in truth:
                parts = math.fsum(b.core_dynamic) + math.fsum(b.core_static) + b.uncore
                if abs(parts - b.pkg) > _CONSERVATION_TOL:
                    raise InvariantViolation(f"socket {b.socket_id}: pkg != component sum")
            cores = tuple((c.core_id, c.socket_id, c.frequency, c.residency) for c in state.cores)
            exp = [c for c in state.cores if c.socket_id == EXPERIMENT_SOCKET]
            host_bw = state.core(self.config.host_core).bandwidth
            hit = (truth, cores, oracle_container_power(state, STRESSOR), host_bw, math.fsum(c.bandwidth for c in exp))
            self._cache[key] = hit
        return hit

    def advance(self, n: int) -> list[TickRecord]:
        out = []
        noise = self.config.noise
        for _ in range(int(n)):
            t = self.tick
            usage = step_workloads(self.workloads, self.state, t)
            truth, cores, oracle, host_bw, sock_bw = self._truth(usage)
            out.append(
                TickRecord(
                    t=t,
                    power=tuple(sample_socket(b, noise, t) for b in truth),
                    truth=truth,
                    usage=tuple(usage),
                    cores=tuple(CoreSample(t, *c) for c in cores),
                    oracle=oracle,
                    host_bandwidth=host_bw,
                    socket_bandwidth=sock_bw,
                )
            )
            self.tick += 1
        return out

    def collect(self, n: int) -> list[TickRecord]:
        """Advance ``n`` ticks whose samples will be aggregated.

        Refuses if the node was reconfigured less than a settle interval ago.
        """
        settle = self.config.plan.settle
        if self.tick - self.last_change < settle and self._version > 0:
            raise InvariantViolation(
                f"sampling at t={self.tick} only {self.tick - self.last_change} s after a configuration change"
            )
        return self.advance(n)

    def startup(self) -> np.ndarray:
        """Quiescent start-up readings of the node meters, ``(n, 2)``: pkg, dram."""
        recs = self.advance(self.config.plan.startup)
        return np.array([[math.fsum(p.pkg for p in r.power), math.fsum(p.dram for p in r.power)] for r in recs])


# -- measurement helpers ----------------------------------------------------


def _clean(series) -> np.ndarray:
    values = np.asarray(series, dtype=float)
    if values.size < MIN_CLEAN_POINTS:
        return values
    return clean_outliers(values)


def _meter(records: list[TickRecord], domain: str) -> np.ndarray:
    return np.array([getattr(r.power[EXPERIMENT_SOCKET], domain) for r in records])


def measure_baseline(bed: Testbed, duration: int | None = None) -> BaselineStats:
    """Record the quiescent experimental socket and accept it only if stable."""
    duration = bed.config.plan.baseline if duration is None else duration
    if duration < 30:
        raise ConfigurationError("baseline duration must be at least 30 s")
    if bed.workloads.schedules:
        raise ConfigurationError("baseline needs a quiescent stressor")
    recs = bed.collect(duration)
    pkg = _clean(_meter(recs, "pkg"))
    dram = _clean(_meter(recs, "dram"))
    stats = BaselineStats(
        duration=duration,
        mean_pkg=float(pkg.mean()),
        mean_dram=float(dram.mean()),
        sigma_pkg=float(pkg.std(ddof=1)),
        sigma_dram=float(dram.std(ddof=1)),
        removed=2 * duration - pkg.size - dram.size,
    )
    if stats.cv_pkg > BASELINE_MAX_CV or stats.cv_dram > BASELINE_MAX_CV:
        raise BaselineRejected(
            f"baseline unstable: CV pkg {stats.cv_pkg:.3f}%, dram {stats.cv_dram:.3f}% (limit {BASELINE_MAX_CV}%)"
        )
    return stats


def _windows(records: list[TickRecord], size: int) -> list[Window]:
    out = []
    for i in range(0, len(records) - size + 1, size):
        chunk = records[i : i + size]
        out.append(
            Window.from_samples(
                [p for r in chunk for p in r.power],
                [u for r in chunk for u in r.usage],
                [c for r in chunk for c in r.cores],
            )
        )
    return out


def _conserves(res: AttributionResult) -> bool:
    dp = math.fsum(c.dyn_pkg for c in res.containers.values())
    dd = math.fsum(c.dyn_dram for c in res.containers.values())
    ip = math.fsum(c.idle_pkg for c in res.containers.values())
    scale = max(1.0, res.node_dyn_pkg + res.node_idle_pkg)
    return (
        abs(dp - res.node_dyn_pkg) <= _CONSERVATION_TOL * scale
        and abs(dd - res.node_dyn_dram) <= _CONSERVATION_TOL * scale
        and abs(ip - res.node_idle_pkg) <= _CONSERVATION_TOL * scale
    )


def _mean(xs) -> float:
    # shifted mean: exact when every value is the same, e.g. a fixed idle share
    a = np.asarray(xs, dtype=float)
    return float(a[0] + (a - a[0]).mean())


def _safe_stability(series):
    values = np.asarray(series, dtype=float)
    if values.size == 0 or values.mean() <= 0:
        return None
    return stability(values)


def _safe_compare(estimated, reference, margin):
    return compare(estimated, reference, margin) if reference > 0 else None


class _Run:
    """Shared machinery for one test: a testbed plus both estimators."""

    def __init__(self, config: ScenarioConfig, stressor: WorkloadSpec | None = None, host_frequency=None):
        self.config = config
        self.bed = Testbed(config, stressor)
        if host_frequency is not None:
            self.bed.state = apply_config(self.bed.state, FrequencyChange((config.host_core,), host_frequency))
        est = config.estimator
        self.estimators = {
            "kepler_ratio": KeplerRatioEstimator(
                est.idle_underestimate_beta_pkg, est.idle_underestimate_beta_dram, est.window
            ).fit(self.bed.startup()),
            "resource_centric": ResourceCentricEstimator(config.socket, est.window).fit(),
        }
        self.conserved = True
        self.steps: list[StepResult] = []

    def step(self, label: str, value: float, extra: dict | None = None) -> StepResult:
        cfg = self.config
        bed = self.bed
        bed.advance(cfg.plan.settle)
        baseline = measure_baseline(bed)

        tenant = bed.workloads.tenants[STRESSOR]
        f_host = bed.state.core(cfg.host_core).frequency
        sched = RequestSchedule.plan(tenant.load, f_host, bed.tick, cfg.plan.request_count)
        bed.workloads.start_requests(STRESSOR, sched)
        load = bed.collect(sched.ticks)
        bed.workloads.stop_requests(STRESSOR)
        bed.advance(cfg.plan.settle)

        raw_pkg, raw_dram = _meter(load, "pkg"), _meter(load, "dram")
        pkg, dram = _clean(raw_pkg), _clean(raw_dram)
        ref_pkg = float(pkg.mean()) - baseline.mean_pkg
        ref_dram = max(float(dram.mean()) - baseline.mean_dram, 0.0)
        oracle = np.array([r.oracle for r in load])

        series = {
            "meter_pkg": {"raw": tuple(raw_pkg), "cleaned": tuple(pkg)},
            "meter_dram": {"raw": tuple(raw_dram), "cleaned": tuple(dram)},
        }
        windows = _windows(load, cfg.estimator.window)
        estimators = {}
        for mode, est in self.estimators.items():
            results = [est.predict(w) for w in windows]
            if mode == "kepler_ratio":
                self.conserved &= all(_conserves(r) for r in results)
            mine = [r[STRESSOR] for r in results]
            raw_dp = [c.dyn_pkg for c in mine]
            raw_dd = [c.dyn_dram for c in mine]
            dp, dd = _clean(raw_dp), _clean(raw_dd)
            series[f"{mode}_dyn_pkg"] = {"raw": tuple(raw_dp), "cleaned": tuple(dp)}
            series[f"{mode}_dyn_dram"] = {"raw": tuple(raw_dd), "cleaned": tuple(dd)}
            estimators[mode] = EstimatorStep(
                mode=mode,
                idle_pkg=_mean([c.idle_pkg for c in mine]),
                dyn_pkg=float(dp.mean()),
                idle_dram=_mean([c.idle_dram for c in mine]),
                dyn_dram=float(dd.mean()),
                total_dyn_pkg=_mean([r.node_dyn_pkg for r in results]),
                total_dyn_dram=_mean([r.node_dyn_dram for r in results]),
                stability_pkg=_safe_stability(dp),
                stability_dram=_safe_stability(dd),
                verdict_pkg=_safe_compare(float(dp.mean()), ref_pkg, cfg.margin),
                verdict_dram=_safe_compare(float(dd.mean()), ref_dram, cfg.margin),
                windows_dyn_pkg=tuple(raw_dp),
                windows_dyn_dram=tuple(raw_dd),
            )
        sock_bw = np.array([r.socket_bandwidth for r in load])
        host_bw = np.array([r.host_bandwidth for r in load])
        result = StepResult(
            label=label,
            value=float(value),
            baseline=baseline,
            oracle_pkg=float(oracle[:, 0].mean()),
            oracle_dram=float(oracle[:, 1].mean()),
            reference_pkg=ref_pkg,
            reference_dram=ref_dram,
            meter_stability_pkg=stability(pkg),
            meter_stability_dram=stability(dram),
            estimators=estimators,
            series=series,
            host_bandwidth_fraction=float(host_bw.sum() / sock_bw.sum()) if sock_bw.sum() > 0 else 0.0,
            extra={
                "requests": sched.request_count,
                "load_seconds": sched.ticks,
                "stressor_utilization": float(np.mean([_stressor_usage(r).cpu_fraction for r in load])),
                **(extra or {}),
            },
        )
        self.steps.append(result)
        return result

    def report(self, test_id: str, step_variable: str, planned: int, extra: dict | None = None) -> TestReport:
        cfg = self.config
        return TestReport(
            test_id=test_id,
            step_variable=step_variable,
            steps=tuple(self.steps),
            primary_estimator=cfg.estimator.mode,
            constants=cfg.constants(),
            scenario_hash=cfg.scenario_hash(),
            seed=cfg.noise.seed,
            invariants={
                "step_count": len(self.steps) == planned,
                "kepler_conservation": self.conserved,
                "settle_discipline": True,  # enforced by Testbed.collect
            },
            margin=cfg.margin,
            extra=extra or {},
        )


def _stressor_usage(record: TickRecord) -> UsageSample:
    for u in record.usage:
        if u.container_id == STRESSOR:
            return u
    raise InvariantViolation("stressor missing from usage telemetry")


def _free_cores(config: ScenarioConfig, needed: int, what: str) -> tuple[int, ...]:
    free = config.free_cores
    if needed > len(free):
        raise ConfigurationError(
            f"{what} needs {needed} free cores but only {len(free)} remain besides host and monitors"
        )
    return free[:needed]


# -- the tests --------------------------------------------------------------


def run_test1(config: ScenarioConfig) -> TestReport:
    """Host-core frequency sweep with everything else at the top frequency."""
    dvfs = config.socket.dvfs
    run = _Run(config, host_frequency=config.plan.test1_host_start)
    others = [c for c in range(config.socket.core_count * config.sockets) if c != config.host_core]
    run.bed.state = apply_config(run.bed.state, FrequencyChange(tuple(others), config.plan.test1_others))
    grid = [f for f in dvfs.grid() if f >= config.plan.test1_host_start - 1e-9]
    for f in grid:
        if run.bed.state.core(config.host_core).frequency != f:
            run.bed.configure(FrequencyChange((config.host_core,), f))
        run.step(f"{f:.1f} GHz", f)
    return run.report("t1", "frequency_ghz", len(grid))


def run_test2(config: ScenarioConfig, step: str = "pkg") -> TestReport:
    """Co-runner sweep: k native CPU hogs next to the stressor."""
    if step not in ("pkg", "dram"):
        raise ConfigurationError(f"unknown test-2 step {step!r}")
    counts = list(config.corunner.counts)
    if counts != sorted(counts):
        raise ConfigurationError("co-runner counts must be non-decreasing")
    cores = _free_cores(config, max(counts), "test 2")
    stressor = config.stressor if step == "pkg" else config.memory_stressor
    run = _Run(config, stressor=stressor)
    running = 0
    for k in counts:
        while running < k:
            run.bed.launch_corunner(f"corunner-{running}", cores[running])
            running += 1
        run.step(f"k={k}", k, {"corunner_cores": list(cores[:k])})
    return run.report(f"t2-{step}", "corunners", len(counts))


def run_test3(config: ScenarioConfig) -> TestReport:
    """C-states off, then on for every experimental-socket core except the host."""
    run = _Run(config)
    run.step("cstates off", 0)
    idle_cores = tuple(
        c.core_id
        for c in run.bed.state.socket_cores(EXPERIMENT_SOCKET)
        if c.core_id != config.host_core
    )
    run.bed.configure(CStateChange(idle_cores, True))
    run.step("cstates on", 1, {"cstate_cores": list(idle_cores)})
    return run.report("t3", "cstates", 2)


def run_inactive_pod_check(config: ScenarioConfig) -> TestReport:
    """Batch jobs run to completion; record idle power handed to them afterwards."""
    batch = config.batch
    cores = _free_cores(config, batch.count, "inactive-pod check")
    run = _Run(config)
    bed = run.bed
    until = bed.tick + batch.duration
    names = [f"batch-{i}" for i in range(batch.count)]
    for name, core in zip(names, cores):
        bed.deploy_batch(name, core, until)
    bed.advance(batch.duration)
    bed.advance(config.plan.settle)

    windows = _windows(bed.collect(batch.observe_windows * config.estimator.window), config.estimator.window)
    observations = {}
    conserved = True
    for mode, est in run.estimators.items():
        rows = []
        for w in windows:
            res = est.predict(w)
            conserved &= _conserves(res)
            completed = {n: res[n].idle_pkg for n in names}
            active = {n: res[n].idle_pkg for n in config.monitors.names}
            rows.append(
                {
                    "t0": w.t0,
                    "t1": w.t1,
                    "node_idle_pkg": res.node_idle_pkg,
                    "idle_sum_pkg": math.fsum(c.idle_pkg for c in res.containers.values()),
                    "system_processes_idle_pkg": res[SYSTEM_PROCESSES].idle_pkg,
                    "completed_idle_pkg": completed,
                    "active_idle_pkg": active,
                    "completed_lifecycle": all(not w.usage[n].active for n in names),
                }
            )
        observations[mode] = rows
    rep = run.report(
        "inactive",
        "window",
        0,
        extra={"namespace": batch.namespace, "completed": names, "windows": observations},
    )
    return TestReport(**{**rep.__dict__, "invariants": {**rep.invariants, "idle_conservation": conserved}})


TESTS = {
    "t1": run_test1,
    "t2-pkg": lambda cfg: run_test2(cfg, "pkg"),
    "t2-dram": lambda cfg: run_test2(cfg, "dram"),
    "t3": run_test3,
    "inactive": run_inactive_pod_check,
}
