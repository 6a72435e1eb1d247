"""Validation harness: scenarios, baselines, the test sequence and statistics."""
from .results import REPORT_VERSION, BaselineStats, EstimatorStep, StepResult, TestReport
from .scenario import ScenarioConfig, ScenarioError, default_scenario, load_scenario, save_scenario
from .stats import (
    ComparisonVerdict,
    StabilityStats,
    TukeyOutlierFilter,
    clean_outliers,
    coefficient_of_variation,
    compare,
    stability,
)
from .testbed import (
    STRESSOR,
    TESTS,
    Testbed,
    measure_baseline,
    run_inactive_pod_check,
    run_test1,
    run_test2,
    run_test3,
)

__all__ = [
    "REPORT_VERSION",
    "BaselineStats",
    "ComparisonVerdict",
    "EstimatorStep",
    "ScenarioConfig",
    "ScenarioError",
    "StabilityStats",
    "StepResult",
    "STRESSOR",
    "TESTS",
    "TestReport",
    "Testbed",
    "TukeyOutlierFilter",
    "clean_outliers",
    "coefficient_of_variation",
    "compare",
    "default_scenario",
    "load_scenario",
    "measure_baseline",
    "run_inactive_pod_check",
    "run_test1",
    "run_test2",
    "run_test3",
    "save_scenario",
    "stability",
]
