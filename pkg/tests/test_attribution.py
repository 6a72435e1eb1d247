import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from powerbench.attribution import (
    SYSTEM_PROCESSES,
    CoreStats,
    EstimatorConfig,
    KeplerRatioEstimator,
    ResourceCentricEstimator,
    UsageStats,
    Window,
    allocate_dynamic_ratio,
    allocate_dynamic_resource_centric,
    allocate_idle,
    estimate,
    idle_from_residency,
    split_node_power,
)
from powerbench.errors import ConfigurationError, InputDomainError
from powerbench.simnode import (
    Activity,
    CStateChange,
    FrequencyChange,
    NodeState,
    SocketSpec,
    apply_config,
    oracle_container_power,
    socket_power,
)
from powerbench.telemetry import CoreSample, PowerSample, UsageSample

SPEC = SocketSpec()


def _u(cpu=0.0, bw=0.0, req=1.0, core=0, native=False, active=True):
    return UsageStats(cpu, cpu, bw, req, core, native, active)


def test_split_node_power():
    assert split_node_power(100.0, 100.0) == (100.0, 0.0)
    assert split_node_power(80.0, 100.0) == (80.0, 0.0)
    assert split_node_power(130.0, 100.0) == (100.0, 30.0)
    with pytest.raises(InputDomainError):
        split_node_power(-1.0, 10.0)


def test_allocate_idle_eight_of_sixty_four():
    out = allocate_idle({"c": _u(req=8)}, 160.0, 64)
    assert out["c"] == 20.0


def test_allocate_idle_completed_gets_nothing():
    out = allocate_idle({"done": _u(req=1, active=False), "live": _u(req=1)}, 160.0, 64)
    assert out == {"done": 0.0, "live": 2.5}


def test_allocate_idle_errors():
    with pytest.raises(ConfigurationError):
        allocate_idle({"c": _u(req=1)}, 10.0, 0)
    with pytest.raises(ConfigurationError):
        allocate_idle({"c": _u(req=65)}, 10.0, 64)


def test_allocate_idle_ignores_usage():
    a = allocate_idle({"c": _u(cpu=0.1, req=1)}, 50.0, 28)
    b = allocate_idle({"c": _u(cpu=0.9, req=1)}, 50.0, 28)
    assert a == b


def test_ratio_seventy_five_percent():
    out = allocate_dynamic_ratio({"a": 0.75, "b": 0.25}, 40.0)
    assert out["a"] == pytest.approx(30.0)


def test_ratio_single_container():
    assert allocate_dynamic_ratio({"a": 0.3, "b": 0.0}, 12.0, "dram") == {"a": 12.0, "b": 0.0}


def test_ratio_stressor_and_monitors():
    out = allocate_dynamic_ratio({"s": 0.45, "k": 0.03, "p": 0.03, "g": 0.03}, 10.0)
    assert out["s"] == pytest.approx(10.0 * 0.45 / 0.54)


def test_ratio_zero_usage_and_errors():
    assert allocate_dynamic_ratio({"a": 0.0}, 5.0) == {"a": 0.0}
    with pytest.raises(InputDomainError):
        allocate_dynamic_ratio({"a": -0.1}, 5.0)
    with pytest.raises(InputDomainError):
        allocate_dynamic_ratio({"a": 0.1}, -5.0)
    with pytest.raises(InputDomainError):
        allocate_dynamic_ratio({"a": 0.1}, 5.0, "gpu")


def test_resource_centric_zero_bandwidth_gets_no_dram():
    out = allocate_dynamic_resource_centric(
        {"a": _u(0.5, 0.0, core=0), "b": _u(0.5, 2.0, core=1)}, 10.0, 4.0, {0: 2.6, 1: 2.6}, SPEC
    )
    assert out["a"][1] == 0.0 and out["b"][1] == 4.0


def test_resource_centric_favours_higher_frequency():
    # equal work: cycles = u * f identical
    out = allocate_dynamic_resource_centric(
        {"slow": _u(0.52, core=0), "fast": _u(0.2, core=1)}, 10.0, 0.0, {0: 1.0, 1: 2.6}, SPEC
    )
    assert out["fast"][0] > out["slow"][0]


def test_resource_centric_missing_core():
    with pytest.raises(ConfigurationError):
        allocate_dynamic_resource_centric({"a": _u(0.5, core=7)}, 1.0, 1.0, {0: 2.6}, SPEC)


# -- windows from a simulated node -----------------------------------------


def _window(state: NodeState, usages: list[UsageSample], t: int = 0) -> Window:
    power = [
        PowerSample(t, b.socket_id, b.pkg, b.dram)
        for b in (socket_power(state, s) for s in range(len(state.sockets)))
    ]
    cores = [CoreSample(t, c.core_id, c.socket_id, c.frequency, c.residency) for c in state.cores]
    return Window.from_samples(power, usages, cores)


def _loaded(f=2.6, u=0.45, bw=0.05, corunners=0):
    state = apply_config(NodeState.build(SPEC), FrequencyChange((0,), f))
    usages = [UsageSample(0, "s", u, u * f, bw, 1, 0)]
    usages += [UsageSample(0, m, 0.03, 0.078, 0.0, 0.1, 13) for m in ("k", "p", "g")]
    usages += [UsageSample(0, f"co{i}", 1.0, 2.6, 0.002, 0, i + 1, native=True) for i in range(corunners)]
    placement: dict[int, list[Activity]] = {}
    for x in usages:
        placement.setdefault(x.core_id, []).append(Activity(x.container_id, x.cpu_fraction, x.bandwidth, x.native))
    return state.with_activities(placement), usages


def _quiet():
    state, usages = _loaded(u=0.0, bw=0.0)
    return np.array([[w.pkg, w.dram] for w in [_window(state, usages)]])


def test_kepler_requires_fit():
    state, usages = _loaded()
    with pytest.raises(NotFittedError):
        KeplerRatioEstimator().predict(_window(state, usages))


def test_kepler_sklearn_params():
    est = KeplerRatioEstimator(beta_pkg=0.5, beta_dram=0.25, window=15)
    assert est.get_params() == {"beta_pkg": 0.5, "beta_dram": 0.25, "window": 15}
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(ConfigurationError):
        KeplerRatioEstimator(beta_pkg=0.0).fit(_quiet())


def test_kepler_fixed_idle_is_scaled_startup_reading():
    X = _quiet()
    est = KeplerRatioEstimator(0.6, 0.2).fit(X)
    assert est.fixed_idle_pkg_ == pytest.approx(0.6 * X[0, 0])
    assert est.fixed_idle_dram_ == pytest.approx(0.2 * X[0, 1])


def test_kepler_conserves_and_pools_natives():
    state, usages = _loaded(corunners=4)
    res = KeplerRatioEstimator().fit(_quiet()).predict(_window(state, usages))
    assert SYSTEM_PROCESSES in res.containers
    assert not any(n.startswith("co") for n in res.containers)
    assert math.fsum(c.dyn_pkg for c in res.containers.values()) == pytest.approx(res.node_dyn_pkg, abs=1e-9)
    assert math.fsum(c.idle_pkg for c in res.containers.values()) == pytest.approx(res.node_idle_pkg, abs=1e-9)
    for c in res.containers.values():
        assert min(c.idle_pkg, c.dyn_pkg, c.idle_dram, c.dyn_dram) >= 0


def test_kepler_dram_follows_cpu_share():
    state, usages = _loaded()
    res = KeplerRatioEstimator().fit(_quiet()).predict(_window(state, usages))
    # monitors move no memory but still receive a DRAM share
    assert res["k"].dyn_dram > 0
    assert res["k"].dyn_dram / res["s"].dyn_dram == pytest.approx(0.03 / 0.45)


def test_cstate_drop_passes_straight_into_dynamic():
    state, usages = _loaded()
    est = KeplerRatioEstimator().fit(_quiet())
    before = est.predict(_window(state, usages))
    on = apply_config(state, CStateChange(tuple(range(1, 14)), True))
    after = est.predict(_window(on, usages))
    drop = socket_power(state, 0).pkg - socket_power(on, 0).pkg
    assert before.node_dyn_pkg - after.node_dyn_pkg == pytest.approx(drop, abs=1e-9)


@pytest.mark.parametrize("f", SPEC.dvfs.grid())
def test_resource_centric_matches_oracle_single_stressor(f):
    u = 2.125 / (2.125 + f)
    state, usages = _loaded(f=f, u=u, bw=0.1 * u)
    res = ResourceCentricEstimator(SPEC).fit().predict(_window(state, usages))
    opkg, odram = oracle_container_power(state, "s")
    assert res["s"].dyn_pkg == pytest.approx(opkg, rel=0.05)
    assert res["s"].dyn_dram == pytest.approx(odram, rel=0.05)


def test_resource_centric_needs_spec():
    with pytest.raises(ConfigurationError):
        ResourceCentricEstimator().fit()


def test_estimate_one_shot():
    state, usages = _loaded()
    w = _window(state, usages)
    with pytest.raises(ConfigurationError):
        estimate(w, EstimatorConfig("kepler_ratio"))
    with pytest.raises(ConfigurationError):
        estimate(w, EstimatorConfig("resource_centric"))
    r = estimate(w, EstimatorConfig("kepler_ratio", fixed_idle_pkg=50.0, fixed_idle_dram=1.0))
    assert r.node_idle_pkg == 50.0
    assert estimate(w, EstimatorConfig("resource_centric"), SPEC).mode == "resource_centric"


def test_estimator_config_validation():
    with pytest.raises(ConfigurationError):
        EstimatorConfig(idle_underestimate_beta_pkg=1.5)
    with pytest.raises(ConfigurationError):
        EstimatorConfig(window=0)
    with pytest.raises(ConfigurationError):
        EstimatorConfig(mode="ml")


# -- properties -------------------------------------------------------------

weights = st.dictionaries(
    st.text("abcdefgh", min_size=1, max_size=3), st.floats(0.0, 1.0), min_size=1, max_size=8
)


@settings(max_examples=200, deadline=None)
@given(w=weights, total=st.floats(0.0, 500.0))
def test_prop_ratio_conserves(w, total):
    out = allocate_dynamic_ratio(w, total)
    if sum(w.values()) > 0:
        assert abs(math.fsum(out.values()) - total) <= 1e-9 * max(1.0, total)
    else:
        assert all(v == 0 for v in out.values())


@settings(max_examples=200, deadline=None)
@given(w=weights, total=st.floats(0.1, 500.0), scale=st.floats(0.1, 10.0))
def test_prop_ratio_scaling_preserves_order(w, total, scale):
    a = allocate_dynamic_ratio(w, total)
    b = allocate_dynamic_ratio(w, total * scale)
    for k in w:
        assert b[k] == pytest.approx(a[k] * scale, rel=1e-9, abs=1e-12)
    assert sorted(w, key=lambda k: (a[k], k)) == sorted(w, key=lambda k: (b[k], k))


@settings(max_examples=100, deadline=None)
@given(f=st.sampled_from(SPEC.dvfs.grid()), freq_other=st.sampled_from(SPEC.dvfs.grid()))
def test_prop_idle_invariant(f, freq_other):
    est = KeplerRatioEstimator().fit(_quiet())
    s1, u1 = _loaded(f=f)
    s2, u2 = _loaded(f=f, corunners=6)
    s2 = apply_config(s2, FrequencyChange((20,), freq_other))
    assert est.predict(_window(s1, u1))["s"].idle_pkg == est.predict(_window(s2, u2))["s"].idle_pkg


def test_dilution_non_increasing():
    est = KeplerRatioEstimator().fit(_quiet())
    shares = []
    for k in range(0, 13):
        state, usages = _loaded(corunners=k)
        shares.append(est.predict(_window(state, usages))["s"].dyn_pkg)
    assert all(a >= b for a, b in zip(shares, shares[1:]))


def test_window_from_samples_needs_power():
    with pytest.raises(InputDomainError):
        Window.from_samples([], [], [])


def test_core_stats_used_for_idle():
    cores = {0: CoreStats(2.6, (1.0, 0.0, 0.0, 0.0), 0), 1: CoreStats(2.6, (0.0, 0.1, 0.2, 0.7), 0)}
    pkg, dram = idle_from_residency(cores, SPEC)
    assert pkg == pytest.approx(SPEC.static_per_core_c0 * 1.14 + SPEC.uncore_power)
    assert dram == SPEC.dram_static
