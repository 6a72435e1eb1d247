"""Result records produced by the validation runs.

Everything here is plain data.  ``to_dict`` emits floats at six significant
digits with a stable key order; ``from_dict`` inverts it.  A report read back
from JSON therefore equals ``report.canonical()``, not the full-precision
in-memory original.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any

from .stats import ComparisonVerdict, StabilityStats

REPORT_VERSION = 1


def round_sig(x: float, digits: int = 6) -> float:
    if x == 0 or not math.isfinite(x):
        return float(x)
    return float(f"{x:.{digits}g}")


def _plain(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return round_sig(obj)
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalars
        return _plain(obj.item())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _stability(d):
    return None if d is None else StabilityStats(**d)


def _verdict(d):
    return None if d is None else ComparisonVerdict(**d)


@dataclass(frozen=True)
class BaselineStats:
    duration: int
    mean_pkg: float
    mean_dram: float
    sigma_pkg: float
    sigma_dram: float
    removed: int = 0

    @property
    def cv_pkg(self) -> float:
        return 100.0 * self.sigma_pkg / self.mean_pkg

    @property
    def cv_dram(self) -> float:
        return 100.0 * self.sigma_dram / self.mean_dram


@dataclass(frozen=True)
class EstimatorStep:
    """One estimator's view of the stressor over a load phase."""

    mode: str
    idle_pkg: float
    dyn_pkg: float
    idle_dram: float
    dyn_dram: float
    total_dyn_pkg: float
    total_dyn_dram: float
    stability_pkg: StabilityStats | None
    stability_dram: StabilityStats | None
    verdict_pkg: ComparisonVerdict | None
    verdict_dram: ComparisonVerdict | None
    windows_dyn_pkg: tuple[float, ...] = ()
    windows_dyn_dram: tuple[float, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorStep":
        return cls(
            **{
                **d,
                "stability_pkg": _stability(d["stability_pkg"]),
                "stability_dram": _stability(d["stability_dram"]),
                "verdict_pkg": _verdict(d["verdict_pkg"]),
                "verdict_dram": _verdict(d["verdict_dram"]),
                "windows_dyn_pkg": tuple(d["windows_dyn_pkg"]),
                "windows_dyn_dram": tuple(d["windows_dyn_dram"]),
            }
        )


@dataclass(frozen=True)
class StepResult:
    label: str
    value: float
    baseline: BaselineStats
    oracle_pkg: float
    oracle_dram: float
    reference_pkg: float
    reference_dram: float
    meter_stability_pkg: StabilityStats
    meter_stability_dram: StabilityStats
    estimators: dict[str, EstimatorStep]
    series: dict[str, dict[str, tuple[float, ...]]] = field(default_factory=dict)
    host_bandwidth_fraction: float = 1.0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "StepResult":
        return cls(
            label=d["label"],
            value=d["value"],
            baseline=BaselineStats(**d["baseline"]),
            oracle_pkg=d["oracle_pkg"],
            oracle_dram=d["oracle_dram"],
            reference_pkg=d["reference_pkg"],
            reference_dram=d["reference_dram"],
            meter_stability_pkg=StabilityStats(**d["meter_stability_pkg"]),
            meter_stability_dram=StabilityStats(**d["meter_stability_dram"]),
            estimators={k: EstimatorStep.from_dict(v) for k, v in d["estimators"].items()},
            series={k: {kk: tuple(vv) for kk, vv in v.items()} for k, v in d["series"].items()},
            host_bandwidth_fraction=d["host_bandwidth_fraction"],
            extra=d["extra"],
        )


@dataclass(frozen=True)
class TestReport:
    test_id: str
    step_variable: str
    steps: tuple[StepResult, ...]
    primary_estimator: str
    constants: dict
    scenario_hash: str
    seed: int
    invariants: dict[str, bool]
    margin: float = 0.05
    extra: dict = field(default_factory=dict)
    report_version: int = REPORT_VERSION

    __test__ = False  # not a pytest class

    @property
    def passed(self) -> bool:
        """True when the primary estimator passes every verdict it has."""
        for s in self.steps:
            e = s.estimators.get(self.primary_estimator)
            if e is None:
                continue
            for v in (e.verdict_pkg, e.verdict_dram):
                if v is not None and not v.passed:
                    return False
        return True

    @property
    def invariants_held(self) -> bool:
        return all(self.invariants.values())

    def step_values(self) -> list[float]:
        return [s.value for s in self.steps]

    def estimator_series(self, mode: str, attr: str) -> list[float]:
        return [getattr(s.estimators[mode], attr) for s in self.steps]

    def to_dict(self) -> dict:
        d = _plain(self)
        d["passed"] = self.passed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestReport":
        if d.get("report_version") != REPORT_VERSION:
            raise ValueError(f"unsupported report_version {d.get('report_version')!r}")
        return cls(
            test_id=d["test_id"],
            step_variable=d["step_variable"],
            steps=tuple(StepResult.from_dict(s) for s in d["steps"]),
            primary_estimator=d["primary_estimator"],
            constants=d["constants"],
            scenario_hash=d["scenario_hash"],
            seed=d["seed"],
            invariants=d["invariants"],
            margin=d["margin"],
            extra=d["extra"],
            report_version=d["report_version"],
        )

    def canonical(self) -> "TestReport":
        """The report as it reads back after serialisation."""
        return TestReport.from_dict(self.to_dict())
