"""Scenario configuration: hardware, workloads, estimator and test plan.

Scenario files are JSON.  The structure is checked against
:data:`SCENARIO_SCHEMA`; semantic checks (isolation flags, core capacity,
value ranges) happen when the dataclasses are built.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema

from ..attribution import EstimatorConfig
from ..errors import ConfigurationError, PowerBenchError
from ..simnode import CStateModel, DvfsModel, SocketSpec
from ..telemetry import NoiseModel
from ..workloads import WorkloadSpec

SCHEMA_VERSION = 1

ISOLATION_DEFAULTS = {
    "turbo": "off",
    "hyperthreading": "off",
    "cstates": "off",
    "governor": "userspace",
    "uncore": "fixed",
    "swap": "off",
}


class ScenarioError(ConfigurationError):
    """Scenario file missing, unparsable or invalid."""


_num = {"type": "number"}
_obj = lambda props, required=(): {  # noqa: E731
    "type": "object",
    "properties": props,
    "required": list(required),
    "additionalProperties": False,
}

_workload = _obj(
    {
        "kind": {"enum": ["cpu_bound", "memory_bound", "mixed"]},
        "cycles_per_request": _num,
        "bandwidth_active": _num,
        "overhead_per_request": _num,
    },
    ["kind", "cycles_per_request", "bandwidth_active", "overhead_per_request"],
)

SCENARIO_SCHEMA = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "sockets": {"type": "integer", "minimum": 1},
        "socket": _obj(
            {
                "core_count": {"type": "integer", "minimum": 1},
                "dvfs": _obj({k: _num for k in ("f_min", "f_max", "f_step", "v0", "v_slope", "k_cap")}),
                "cstates": _obj(
                    {
                        "leak_factors": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                        "idle_residency": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
                    }
                ),
                "static_per_core_c0": _num,
                "uncore_freq": _num,
                "uncore_power": _num,
                "dram_static": _num,
                "dram_bw_coeff": _num,
            }
        ),
        "isolation": _obj({k: {"type": "string"} for k in ISOLATION_DEFAULTS}),
        "host_core": {"type": "integer", "minimum": 0},
        "monitor_core": {"type": "integer", "minimum": 0},
        "stressor": _workload,
        "memory_stressor": _workload,
        "corunner": _obj(
            {
                "utilization": _num,
                "bandwidth": _num,
                "memory_limit_mb": _num,
                "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            }
        ),
        "monitors": _obj(
            {
                "names": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "usage_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "requested_cores": _num,
                "bandwidth": _num,
            }
        ),
        "background": _obj({"total_utilization": _num, "bandwidth": _num}),
        "batch": _obj(
            {
                "count": {"type": "integer", "minimum": 1},
                "duration": {"type": "integer", "minimum": 1},
                "namespace": {"type": "string"},
                "observe_windows": {"type": "integer", "minimum": 1},
            }
        ),
        "plan": _obj(
            {
                "request_count": {"type": "integer", "minimum": 1},
                "settle": {"type": "integer", "minimum": 0},
                "baseline": {"type": "integer", "minimum": 1},
                "startup": {"type": "integer", "minimum": 1},
                "test1_host_start": _num,
                "test1_others": _num,
            }
        ),
        "estimator": _obj(
            {
                "mode": {"enum": ["kepler_ratio", "resource_centric"]},
                "beta_pkg": _num,
                "beta_dram": _num,
                "window": {"type": "integer", "minimum": 1},
            }
        ),
        "noise": _obj({"relative_sigma": _num, "seed": {"type": "integer"}}),
        "margin": _num,
        "calibration": {"type": "object"},
    },
    ["schema_version"],
)


@dataclass(frozen=True)
class CorunnerPlan:
    utilization: float = 1.0
    bandwidth: float = 0.002
    memory_limit_mb: float = 1000
    counts: tuple[int, ...] = (0, 2, 4, 6, 8, 10, 12)


@dataclass(frozen=True)
class MonitorPlan:
    names: tuple[str, ...] = ("kepler", "prometheus", "grafana")
    usage_range: tuple[float, float] = (0.02, 0.05)
    requested_cores: float = 0.1
    bandwidth: float = 0.0


@dataclass(frozen=True)
class BackgroundPlan:
    """Constant OS/control-plane load spread over the non-experimental socket."""

    total_utilization: float = 8.0
    bandwidth: float = 0.02


@dataclass(frozen=True)
class BatchPlan:
    count: int = 12
    duration: int = 120
    namespace: str = "idle_ns"
    observe_windows: int = 4


@dataclass(frozen=True)
class TestPlan:
    request_count: int = 100
    settle: int = 30
    baseline: int = 120
    startup: int = 30
    test1_host_start: float = 1.0
    test1_others: float = 2.6


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "default"
    sockets: int = 2
    socket: SocketSpec = field(default_factory=SocketSpec)
    isolation: dict = field(default_factory=lambda: dict(ISOLATION_DEFAULTS))
    host_core: int = 0
    monitor_core: int = 13
    stressor: WorkloadSpec = field(default_factory=WorkloadSpec)
    memory_stressor: WorkloadSpec = field(
        default_factory=lambda: WorkloadSpec("memory_bound", 2.125, 10.0, 1.0)
    )
    corunner: CorunnerPlan = field(default_factory=CorunnerPlan)
    monitors: MonitorPlan = field(default_factory=MonitorPlan)
    background: BackgroundPlan = field(default_factory=BackgroundPlan)
    batch: BatchPlan = field(default_factory=BatchPlan)
    plan: TestPlan = field(default_factory=TestPlan)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    margin: float = 0.05
    calibration: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in ISOLATION_DEFAULTS.items():
            if self.isolation.get(k, v) != v:
                raise ScenarioError(
                    f"isolation flag {k}={self.isolation[k]!r}; scenarios must use {v!r} "
                    "(only test steps may override frequency and C-states)"
                )
        extra = set(self.isolation) - set(ISOLATION_DEFAULTS)
        if extra:
            raise ScenarioError(f"unknown isolation flags {sorted(extra)}")
        n = self.socket.core_count
        for name in ("host_core", "monitor_core"):
            if not 0 <= getattr(self, name) < n:
                raise ScenarioError(f"{name} must be a core of the experimental socket (0..{n - 1})")
        if self.host_core == self.monitor_core:
            raise ScenarioError("host_core and monitor_core must differ")
        if self.sockets < 2:
            raise ScenarioError("the isolation setup needs two sockets")
        if self.stressor.kind != "cpu_bound":
            raise ScenarioError("stressor must be cpu_bound")
        if self.memory_stressor.kind != "memory_bound":
            raise ScenarioError("memory_stressor must be memory_bound")
        lo, hi = self.monitors.usage_range
        if not 0 <= lo <= hi <= 1:
            raise ScenarioError("monitor usage_range must satisfy 0 <= lo <= hi <= 1")
        if not 0 < self.margin < 1:
            raise ScenarioError("margin must lie in (0, 1)")
        if self.background.total_utilization > n:
            raise ScenarioError("background load exceeds the socket's capacity")
        if self.plan.settle < 30 and self.plan.settle != 0:
            raise ScenarioError("settle interval must be at least 30 s")
        if self.plan.baseline < 30:
            raise ScenarioError("baseline duration must be at least 30 s")
        if self.estimator.window < 1:
            raise ScenarioError("estimator window must be >= 1 s")

    @property
    def free_cores(self) -> tuple[int, ...]:
        """Experimental-socket cores available to co-runners and batch jobs."""
        return tuple(
            c for c in range(self.socket.core_count) if c not in (self.host_core, self.monitor_core)
        )

    def with_seed(self, seed: int | None) -> "ScenarioConfig":
        if seed is None:
            return self
        return replace(self, noise=replace(self.noise, seed=int(seed)))

    def with_noise(self, relative_sigma: float) -> "ScenarioConfig":
        return replace(self, noise=replace(self.noise, relative_sigma=relative_sigma))

    def constants(self) -> dict:
        """Model constants a report should carry."""
        s = self.socket
        return {
            "k_cap": s.dvfs.k_cap,
            "v0": s.dvfs.v0,
            "v_slope": s.dvfs.v_slope,
            "static_per_core_c0": s.static_per_core_c0,
            "uncore_power": s.uncore_power,
            "dram_static": s.dram_static,
            "dram_bw_coeff": s.dram_bw_coeff,
            "leak_factors": list(s.cstates.leak_factors),
            "idle_residency": list(s.cstates.idle_residency),
            "cycles_per_request": self.stressor.cycles_per_request,
            "overhead_per_request": self.stressor.overhead_per_request,
            "beta_pkg": self.estimator.idle_underestimate_beta_pkg,
            "beta_dram": self.estimator.idle_underestimate_beta_dram,
            "background_utilization": self.background.total_utilization,
            "noise_relative_sigma": self.noise.relative_sigma,
        }

    def to_dict(self) -> dict:
        s = self.socket
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "sockets": self.sockets,
            "socket": {
                "core_count": s.core_count,
                "dvfs": asdict(s.dvfs),
                "cstates": {
                    "leak_factors": list(s.cstates.leak_factors),
                    "idle_residency": list(s.cstates.idle_residency),
                },
                "static_per_core_c0": s.static_per_core_c0,
                "uncore_freq": s.uncore_freq,
                "uncore_power": s.uncore_power,
                "dram_static": s.dram_static,
                "dram_bw_coeff": s.dram_bw_coeff,
            },
            "isolation": dict(self.isolation),
            "host_core": self.host_core,
            "monitor_core": self.monitor_core,
            "stressor": asdict(self.stressor),
            "memory_stressor": asdict(self.memory_stressor),
            "corunner": {**asdict(self.corunner), "counts": list(self.corunner.counts)},
            "monitors": {
                **asdict(self.monitors),
                "names": list(self.monitors.names),
                "usage_range": list(self.monitors.usage_range),
            },
            "background": asdict(self.background),
            "batch": asdict(self.batch),
            "plan": asdict(self.plan),
            "estimator": {
                "mode": self.estimator.mode,
                "beta_pkg": self.estimator.idle_underestimate_beta_pkg,
                "beta_dram": self.estimator.idle_underestimate_beta_dram,
                "window": self.estimator.window,
            },
            "noise": asdict(self.noise),
            "margin": self.margin,
            "calibration": self.calibration,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        try:
            jsonschema.validate(data, SCENARIO_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ScenarioError(f"scenario invalid at {path}: {exc.message}") from None
        base = cls()
        try:
            sock = data.get("socket", {})
            spec = SocketSpec(
                core_count=sock.get("core_count", base.socket.core_count),
                dvfs=replace(base.socket.dvfs, **sock.get("dvfs", {})),
                cstates=CStateModel(
                    tuple(sock.get("cstates", {}).get("leak_factors", base.socket.cstates.leak_factors)),
                    tuple(sock.get("cstates", {}).get("idle_residency", base.socket.cstates.idle_residency)),
                ),
                **{
                    k: sock[k]
                    for k in ("static_per_core_c0", "uncore_freq", "uncore_power", "dram_static", "dram_bw_coeff")
                    if k in sock
                },
            )
            est = data.get("estimator", {})
            cor = data.get("corunner", {})
            mon = data.get("monitors", {})
            return cls(
                name=data.get("name", base.name),
                sockets=data.get("sockets", base.sockets),
                socket=spec,
                isolation={**ISOLATION_DEFAULTS, **data.get("isolation", {})},
                host_core=data.get("host_core", base.host_core),
                monitor_core=data.get("monitor_core", base.monitor_core),
                stressor=WorkloadSpec(**data["stressor"]) if "stressor" in data else base.stressor,
                memory_stressor=(
                    WorkloadSpec(**data["memory_stressor"]) if "memory_stressor" in data else base.memory_stressor
                ),
                corunner=replace(
                    base.corunner,
                    **{**cor, **({"counts": tuple(cor["counts"])} if "counts" in cor else {})},
                ),
                monitors=replace(
                    base.monitors,
                    **{
                        **mon,
                        **({"names": tuple(mon["names"])} if "names" in mon else {}),
                        **({"usage_range": tuple(mon["usage_range"])} if "usage_range" in mon else {}),
                    },
                ),
                background=replace(base.background, **data.get("background", {})),
                batch=replace(base.batch, **data.get("batch", {})),
                plan=replace(base.plan, **data.get("plan", {})),
                estimator=EstimatorConfig(
                    mode=est.get("mode", base.estimator.mode),
                    idle_underestimate_beta_pkg=est.get("beta_pkg", base.estimator.idle_underestimate_beta_pkg),
                    idle_underestimate_beta_dram=est.get("beta_dram", base.estimator.idle_underestimate_beta_dram),
                    window=est.get("window", base.estimator.window),
                ),
                noise=replace(base.noise, **data.get("noise", {})),
                margin=data.get("margin", base.margin),
                calibration=data.get("calibration", {}),
            )
        except ScenarioError:
            raise
        except (PowerBenchError, TypeError, ValueError) as exc:
            raise ScenarioError(f"scenario invalid: {exc}") from None

    def scenario_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_scenario(path) -> ScenarioConfig:
    """Read a scenario file; bare names resolve to bundled scenarios."""
    p = Path(path)
    if not p.exists():
        bundled = _bundled_path(str(path))
        if bundled is None:
            raise ScenarioError(f"scenario file not found: {path}")
        p = bundled
    try:
        data = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {p}: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    return ScenarioConfig.from_dict(data)


def save_scenario(config: ScenarioConfig, path) -> Path:
    p = Path(path)
    p.write_text(json.dumps(config.to_dict(), indent=2) + "\n")
    return p


def bundled_scenarios() -> list[str]:
    root = resources.files("powerbench") / "data"
    return sorted(e.name for e in root.iterdir() if e.name.endswith(".json") and not e.name.startswith("targets"))


def _bundled_path(name: str):
    root = resources.files("powerbench") / "data"
    for candidate in (name, f"{name}.json"):
        entry = root / candidate
        if entry.is_file():
            return Path(str(entry))
    return None


def default_scenario() -> ScenarioConfig:
    return load_scenario("default.json")
