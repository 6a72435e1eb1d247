import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from powerbench.errors import CalibrationError, ConfigurationError, InputDomainError
from powerbench.simnode import FrequencyChange, NodeState, SocketSpec, apply_config
from powerbench.workloads import (
    ConstantLoad,
    ContainerDeployment,
    RequestSchedule,
    WorkloadSet,
    WorkloadSpec,
    busy_seconds,
    calibrate_work_overhead,
    closed_loop_utilization,
    draw_monitor_usage,
    place_usage,
    service_time,
    step_workloads,
)

CPU = WorkloadSpec()


def test_service_time_oracle():
    assert service_time(CPU, 1.0) == pytest.approx(2.125)
    assert service_time(CPU, 2.0) == pytest.approx(service_time(CPU, 1.0) / 2)
    assert service_time(CPU, 2.6) / service_time(CPU, 1.0) == pytest.approx(1.0 / 2.6)


def test_service_time_rejects_nonpositive_frequency():
    with pytest.raises(InputDomainError):
        service_time(CPU, 0.0)


def test_closed_loop_band():
    assert closed_loop_utilization(CPU, 1.0) == pytest.approx(0.68, abs=0.01)
    assert closed_loop_utilization(CPU, 2.6) == pytest.approx(0.45, abs=0.01)


def test_zero_overhead_is_fully_busy():
    assert closed_loop_utilization(WorkloadSpec(overhead_per_request=0.0), 1.8) == 1.0


@pytest.mark.parametrize(
    "kw",
    [
        {"cycles_per_request": 0.0},
        {"overhead_per_request": -1.0},
        {"kind": "cpu_bound", "bandwidth_active": 0.5},
        {"kind": "memory_bound", "bandwidth_active": 1.0},
        {"kind": "gpu"},
    ],
)
def test_workload_spec_validation(kw):
    with pytest.raises(InputDomainError):
        WorkloadSpec(**kw)


def test_calibrate_work_overhead_ratio():
    cycles, overhead = calibrate_work_overhead(0.68, 0.45, 1.0, 2.6)
    assert cycles / overhead == pytest.approx(2.125)
    spec = WorkloadSpec(cycles_per_request=cycles, overhead_per_request=overhead)
    assert closed_loop_utilization(spec, 1.0) == pytest.approx(0.68, abs=1e-12)
    assert abs(closed_loop_utilization(spec, 2.6) - 0.45) <= 0.01


@pytest.mark.parametrize("args", [(0.5, 0.5, 1.0, 1.0), (0.45, 0.68, 1.0, 2.6), (0.68, 0.2, 1.0, 2.6)])
def test_calibrate_work_overhead_infeasible(args):
    with pytest.raises(CalibrationError) as exc:
        calibrate_work_overhead(*args)
    assert exc.value.violations == ["utilization_band"]


def test_guaranteed_qos_rules():
    with pytest.raises(ConfigurationError):
        ContainerDeployment("c", requested_cores=2)
    with pytest.raises(ConfigurationError):
        ContainerDeployment("c", memory_limit_mb=None)
    ContainerDeployment("m", qos="burstable", requested_cores=0.1, memory_limit_mb=None)


def test_schedule_length():
    s = RequestSchedule.plan(CPU, 1.0, start=10)
    assert s.request_count == 100
    assert s.ticks == round(100 * 3.125)
    assert s.covers(10) and not s.covers(s.end)


def test_idle_gap_has_no_compute():
    period = 2.125 + 1.0
    assert busy_seconds(CPU, 1.0, 2.125, period) == pytest.approx(0.0)
    assert busy_seconds(CPU, 1.0, 0, 100 * period) == pytest.approx(100 * 2.125)


def test_monitor_usage_range_and_constancy():
    a = draw_monitor_usage(3)
    assert set(a) == {"kepler", "prometheus", "grafana"}
    assert all(0.02 <= u <= 0.05 for u in a.values())
    assert draw_monitor_usage(3) == a


def _node():
    return NodeState.build(SocketSpec())


def test_pinning_conflict():
    ws = WorkloadSet()
    ws.deploy(ContainerDeployment("a", core_id=0), CPU)
    ws.launch_native("n", 0, ConstantLoad(1.0))
    with pytest.raises(ConfigurationError):
        step_workloads(ws, _node(), 0)


def test_burstable_may_share():
    ws = WorkloadSet()
    for n in ("x", "y"):
        ws.deploy(ContainerDeployment(n, core_id=5, qos="burstable", requested_cores=0.1), ConstantLoad(0.03))
    assert len(step_workloads(ws, _node(), 0)) == 2


def test_completed_reports_zero():
    ws = WorkloadSet()
    ws.deploy(ContainerDeployment("b", core_id=2), ConstantLoad(1.0, 0.5), until=5)
    assert step_workloads(ws, _node(), 4)[0].cpu_fraction == 1.0
    late = step_workloads(ws, _node(), 5)[0]
    assert (late.cpu_fraction, late.bandwidth, late.active) == (0.0, 0.0, False)


def test_stressor_usage_and_cycles():
    ws = WorkloadSet()
    ws.deploy(ContainerDeployment("s", core_id=0), CPU)
    state = apply_config(_node(), FrequencyChange((0,), 1.0))
    ws.start_requests("s", RequestSchedule.plan(CPU, 1.0, 0))
    u = step_workloads(ws, state, 3)[0]
    assert u.cpu_fraction == pytest.approx(0.68)
    assert u.cycles == pytest.approx(u.cpu_fraction * 1.0, abs=1e-6)
    ws.stop_requests("s")
    assert step_workloads(ws, state, 4)[0].cpu_fraction == 0.0


def test_corunners_leave_stressor_unchanged():
    ws = WorkloadSet()
    ws.deploy(ContainerDeployment("s", core_id=0), CPU)
    ws.start_requests("s", RequestSchedule.plan(CPU, 2.6, 0))
    before = [u for u in step_workloads(ws, _node(), 1) if u.container_id == "s"]
    for i in range(12):
        ws.launch_native(f"co{i}", i + 1, ConstantLoad(1.0, 0.002))
    after = [u for u in step_workloads(ws, _node(), 1) if u.container_id == "s"]
    assert before == after


def test_place_usage_puts_idle_tenants_on_cores():
    ws = WorkloadSet()
    ws.deploy(ContainerDeployment("s", core_id=4), CPU)
    state = place_usage(_node(), step_workloads(ws, _node(), 0))
    assert state.core(4).activities[0].owner == "s"


@settings(max_examples=100, deadline=None)
@given(f=st.sampled_from(SocketSpec().dvfs.grid()), t=st.integers(0, 200))
def test_prop_stressor_usage_constant_over_schedule(f, t):
    ws = WorkloadSet()
    ws.deploy(ContainerDeployment("s", core_id=0), CPU)
    state = apply_config(_node(), FrequencyChange((0,), f))
    sched = RequestSchedule.plan(CPU, f, 0)
    ws.start_requests("s", sched)
    u0 = step_workloads(ws, state, 0)[0].cpu_fraction
    ut = step_workloads(ws, state, t % sched.ticks)[0].cpu_fraction
    assert u0 == ut == closed_loop_utilization(CPU, f)


@settings(max_examples=100, deadline=None)
@given(f1=st.floats(0.5, 3.0), f2=st.floats(0.5, 3.0))
def test_prop_utilization_decreasing(f1, f2):
    if f1 < f2:
        assert closed_loop_utilization(CPU, f1) > closed_loop_utilization(CPU, f2)
