from __future__ import annotations

import cmath
import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seriescomp.device import (
    AngleTrackerSettings,
    CommandMode,
    ContractViolation,
    DeviceProtectionSettings,
    DeviceRating,
    DeviceState,
    InjectionCommand,
    Mode,
    Polarity,
    capability_limit,
    compute_injection,
    step_device,
    step_protection,
    update_angle_tracker,
    wrap_angle,
)

RATING = DeviceRating()
SETTINGS = DeviceProtectionSettings()
DT = 250e-6
INJECTING = DeviceState(phase=0, mode=Mode.INJECTION, vsl_closed=False)


# ---------------------------------------------------------------- tracker


def test_tracker_fixed_point():
    s = DeviceState(0, angle_tracker_rad=0.3)
    out = update_angle_tracker(s, cmath.rect(1.0, 0.3), 0.001, AngleTrackerSettings(0.1))
    assert out.angle_tracker_rad == 0.3


def test_tracker_single_step():
    s = DeviceState(0, angle_tracker_rad=0.0)
    out = update_angle_tracker(s, cmath.rect(1.0, 0.5), 0.001, AngleTrackerSettings(0.1))
    assert out.angle_tracker_rad == pytest.approx(0.005, abs=1e-15)


def test_tracker_converges_in_five_tau():
    tau, dt, theta = 0.1, 0.001, 1.0
    s = DeviceState(0, angle_tracker_rad=0.0)
    for _ in range(round(5 * tau / dt)):
        s = update_angle_tracker(s, cmath.rect(1.0, theta), dt, AngleTrackerSettings(tau))
    assert abs(theta - s.angle_tracker_rad) <= 0.01 * theta


def test_tracker_holds_below_minimum_current():
    s = DeviceState(0, angle_tracker_rad=0.2)
    out = update_angle_tracker(s, cmath.rect(0.01, 2.0), 0.001, AngleTrackerSettings(0.1), i_min_ka=0.05)
    assert out.angle_tracker_rad == 0.2


def test_tracker_locks_on_first_current():
    out = update_angle_tracker(DeviceState(0), cmath.rect(1.0, -1.2), 0.001, AngleTrackerSettings(0.1))
    assert out.angle_tracker_rad == pytest.approx(-1.2)


def test_tracker_wraps_shortest_way():
    s = DeviceState(0, angle_tracker_rad=math.pi - 0.05)
    out = update_angle_tracker(s, cmath.rect(1.0, -math.pi + 0.05), 0.01, AngleTrackerSettings(0.1))
    # the short way round crosses +pi
    assert abs(wrap_angle(out.angle_tracker_rad - (math.pi - 0.04))) < 1e-12


def test_tracker_rejects_bad_dt():
    with pytest.raises(ContractViolation):
        update_angle_tracker(DeviceState(0), 1 + 0j, 0.0, AngleTrackerSettings())


# ---------------------------------------------------------------- injection


def test_fixed_reactance_example():
    big = DeviceRating(n_converters=100)
    i = cmath.rect(0.7, math.radians(-30))
    v = compute_injection(InjectionCommand(x_set_ohm=12.0), i, INJECTING, big)
    assert abs(v) == pytest.approx(8.4, rel=1e-12)
    assert math.degrees(cmath.phase(v)) == pytest.approx(60.0, abs=1e-9)


def test_zero_current_zero_injection():
    assert compute_injection(InjectionCommand(x_set_ohm=12.0), 0j, INJECTING, RATING) == 0


@pytest.mark.parametrize("polarity, quarter", [(Polarity.INDUCTIVE, 90.0), (Polarity.CAPACITIVE, -90.0)])
def test_fixed_voltage_quadrature(polarity, quarter):
    i = cmath.rect(0.6, 0.4)
    state = INJECTING._replace(angle_tracker_rad=cmath.phase(i))
    cmd = InjectionCommand(CommandMode.FIXED_VOLTAGE, v_set_kv=5.0, polarity=polarity)
    v = compute_injection(cmd, i, state, RATING)
    assert abs(v) == pytest.approx(5.0, rel=1e-12)
    assert math.degrees(wrap_angle(cmath.phase(v) - cmath.phase(i))) == pytest.approx(quarter, abs=1e-9)


def test_fixed_voltage_without_tracker_lock_is_zero():
    cmd = InjectionCommand(CommandMode.FIXED_VOLTAGE, v_set_kv=5.0)
    assert compute_injection(cmd, 0.5 + 0j, INJECTING, RATING) == 0


def test_off_command():
    assert compute_injection(InjectionCommand(CommandMode.OFF), 0.5 + 0j, INJECTING, RATING) == 0


@pytest.mark.parametrize("mode", [Mode.MONITORING, Mode.LOR_BYPASS, Mode.OC_BYPASS])
def test_injection_outside_injection_mode_is_violation(mode):
    with pytest.raises(ContractViolation):
        compute_injection(InjectionCommand(x_set_ohm=1.0), 0.5 + 0j, DeviceState(0, mode=mode), RATING)


def test_command_validation():
    with pytest.raises(ValueError):
        InjectionCommand(x_set_ohm=math.inf)
    with pytest.raises(ValueError):
        InjectionCommand(CommandMode.FIXED_VOLTAGE, v_set_kv=-1.0)


@settings(max_examples=200, deadline=None)
@given(
    x=st.floats(min_value=-30, max_value=30).filter(lambda v: abs(v) > 1e-3),
    mag=st.floats(min_value=0.06, max_value=0.99),
    ang=st.floats(min_value=-math.pi, max_value=math.pi),
)
def test_fixed_reactance_quadrature_property(x, mag, ang):
    big = DeviceRating(n_converters=1000)
    i = cmath.rect(mag, ang)
    v = compute_injection(InjectionCommand(x_set_ohm=x), i, INJECTING, big)
    err = wrap_angle(cmath.phase(v) - cmath.phase(i) - math.copysign(math.pi / 2, x))
    assert abs(err) <= 1e-9


@settings(max_examples=300, deadline=None)
@given(
    x=st.floats(min_value=-100, max_value=100),
    mag=st.floats(min_value=0.0, max_value=10.0),
    ang=st.floats(min_value=-math.pi, max_value=math.pi),
    v_set=st.floats(min_value=0, max_value=50),
    fixed_voltage=st.booleans(),
)
def test_clamp_property(x, mag, ang, v_set, fixed_voltage):
    i = cmath.rect(mag, ang)
    if fixed_voltage:
        cmd = InjectionCommand(CommandMode.FIXED_VOLTAGE, v_set_kv=v_set)
    else:
        cmd = InjectionCommand(x_set_ohm=x)
    state = INJECTING._replace(angle_tracker_rad=ang)
    v = compute_injection(cmd, i, state, RATING)
    assert abs(v) <= capability_limit(RATING, mag) * (1 + 1e-12)


# ---------------------------------------------------------------- capability


def test_capability_examples():
    assert RATING.v_cap_kv == 10.0
    assert capability_limit(RATING, 2.0) == 5.0
    assert capability_limit(RATING, 0.0) == 0.0
    assert capability_limit(RATING, RATING.rated_current_ka) == RATING.v_cap_kv
    assert capability_limit(RATING, 0.5) == 10.0
    assert capability_limit(RATING, 0.04) == 0.0


def test_rating_consistency():
    r = DeviceRating(n_converters=7, s_per_converter_mvar=1.5, rated_current_ka=1.2)
    assert r.v_cap_kv * r.rated_current_ka == pytest.approx(r.s_total_mvar)
    with pytest.raises(ValueError):
        DeviceRating(n_converters=0)


# ---------------------------------------------------------------- protection


def test_oc_entry():
    s, ev = step_protection(INJECTING, 4.0, False, False, 1.0, SETTINGS, RATING)
    assert s.mode is Mode.OC_BYPASS and s.vsl_closed and s.last_injection == 0
    assert "oc_bypass_enter" in ev
    assert s.lockout_deadline_ns == 31_000_000_000


def test_lor_entry():
    s, ev = step_protection(INJECTING, 1.2, False, False, 1.0, SETTINGS, RATING)
    assert s.mode is Mode.LOR_BYPASS and not s.vsl_closed and s.last_injection == 0
    assert ev == ["lor_enter", "lor_trigger"]


def test_no_change_below_thresholds():
    s, ev = step_protection(INJECTING._replace(last_t_ns=0), 1.0, False, False, 1.0, SETTINGS, RATING)
    assert s.mode is Mode.INJECTION and ev == []


def test_lor_disabled_ignores_lor_current():
    off = DeviceProtectionSettings(lor_enabled=False)
    s, _ = step_protection(INJECTING, 1.2, True, False, 1.0, off, RATING)
    assert s.mode is Mode.INJECTION


def test_oc_disabled_ignores_fault_current():
    off = DeviceProtectionSettings(oc_enabled=False, lor_enabled=False)
    s, _ = step_protection(INJECTING, 10.0, False, False, 1.0, off, RATING)
    assert s.mode is Mode.INJECTION


def test_lor_hold_exactly_one_second():
    s, _ = step_protection(INJECTING, 1.2, False, False, 1.0, SETTINGS, RATING)
    k = 0
    t0 = 1.0
    while True:
        k += 1
        t = t0 + k * DT
        s, ev = step_protection(s, 0.5, False, False, t, SETTINGS, RATING)
        if s.mode is Mode.INJECTION:
            break
    assert k * DT == pytest.approx(1.0)
    assert ev == ["lor_exit"]


def test_ipb_command_holds_without_rearming():
    s, ev = step_protection(INJECTING, 0.5, False, True, 1.0, SETTINGS, RATING)
    assert s.mode is Mode.LOR_BYPASS and s.lor_from_ipb and ev == ["lor_enter"]
    # still commanded after the hold has run out
    s, _ = step_protection(s, 0.5, False, True, 5.0, SETTINGS, RATING)
    assert s.mode is Mode.LOR_BYPASS
    s, ev = step_protection(s, 0.5, False, False, 5.00025, SETTINGS, RATING)
    assert s.mode is Mode.INJECTION and ev == ["lor_exit"]


def test_oc_lockout_rearms_while_above_lor():
    s, _ = step_protection(INJECTING, 4.0, False, False, 1.0, SETTINGS, RATING)
    s, _ = step_protection(s, 2.0, False, False, 2.0, SETTINGS, RATING)
    s, _ = step_protection(s, 0.5, False, False, 31.5, SETTINGS, RATING)
    assert s.mode is Mode.OC_BYPASS
    s, ev = step_protection(s, 0.5, False, False, 32.0, SETTINGS, RATING)
    assert s.mode is Mode.INJECTION and ev == ["oc_bypass_exit"]


def test_oc_overrides_lor():
    s, _ = step_protection(INJECTING, 1.2, False, False, 1.0, SETTINGS, RATING)
    s, ev = step_protection(s, 4.0, False, False, 1.00025, SETTINGS, RATING)
    assert s.mode is Mode.OC_BYPASS and ev == ["lor_exit", "oc_bypass_enter"]


def test_monitoring_cycle():
    s = INJECTING
    t = 0.0
    for _ in range(round(SETTINGS.t_low_current_s / DT)):
        s, ev = step_protection(s, 0.01, False, False, t, SETTINGS, RATING)
        assert s.mode is Mode.INJECTION
        t += DT
    s, ev = step_protection(s, 0.01, False, False, t, SETTINGS, RATING)
    assert s.mode is Mode.MONITORING and s.vsl_closed and ev == ["monitoring_enter"]
    s, ev = step_protection(s, 0.3, False, False, t + DT, SETTINGS, RATING)
    assert s.mode is Mode.INJECTION and ev == ["injection_enter"]


def test_time_must_not_go_backwards():
    s, _ = step_protection(INJECTING, 0.5, False, False, 1.0, SETTINGS, RATING)
    with pytest.raises(ContractViolation):
        step_protection(s, 0.5, False, False, 0.5, SETTINGS, RATING)


def test_settings_invariants():
    assert SETTINGS.violations() == []
    bad = DeviceProtectionSettings(i_lor_ka=4.0, t_bypass_ms=2.0, t_oc_lockout_s=10.0, t_lor_hold_s=0.0)
    msgs = " ".join(bad.violations())
    for name in ("i_lor_ka", "i_oc_ka", "t_bypass_ms", "t_oc_lockout_s", "t_lor_hold_s"):
        assert name in msgs


def test_state_machine_exhaustive_grid():
    currents = [0.0, 0.04, 0.05, 0.5, 1.1414, 1.2, 3.8, 4.0]
    modes = list(Mode)
    for mode, i, backup, ipb, lor_on, oc_on in itertools.product(
        modes, currents, (False, True), (False, True), (False, True), (False, True)
    ):
        settings_ = DeviceProtectionSettings(lor_enabled=lor_on, oc_enabled=oc_on)
        start = DeviceState(
            0,
            mode=mode,
            vsl_closed=mode not in (Mode.INJECTION, Mode.LOR_BYPASS),
            lockout_deadline_ns=10**12 if mode is Mode.OC_BYPASS else None,
            lor_hold_deadline_ns=10**12 if mode is Mode.LOR_BYPASS else None,
        )
        s, _ = step_protection(start, i, backup, ipb, 1.0, settings_, RATING)
        assert s.mode in modes
        # state invariants
        if s.mode is Mode.OC_BYPASS:
            assert s.vsl_closed
        if s.mode is Mode.INJECTION:
            assert not s.vsl_closed
        if s.mode is not Mode.INJECTION:
            assert s.last_injection == 0
        if oc_on and i > 3.8:
            assert s.mode is Mode.OC_BYPASS


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=6.0), min_size=10, max_size=400))
def test_bypass_latency_and_lockout_property(currents):
    """After an OC crossing the injection is zero from the next step on,
    and Injection never returns within 30 s of the last current above i_lor."""
    cmd = InjectionCommand(x_set_ohm=5.0)
    tracker = AngleTrackerSettings()
    s = INJECTING
    crossing = None
    last_above_lor = None
    # long steps stretch the 30 s lockout over a short trajectory
    dt = 0.2
    for k, mag in enumerate(currents):
        t = k * dt
        s, v, _ = step_device(s, cmd, complex(mag, 0), False, False, t, dt, RATING, SETTINGS, tracker)
        if mag > SETTINGS.i_oc_ka and crossing is None:
            crossing = t
        if crossing is not None:
            assert v == 0 or s.mode is Mode.INJECTION
            if mag > SETTINGS.i_lor_ka:
                last_above_lor = t
            if s.mode is Mode.INJECTION:
                assert t >= last_above_lor + 30.0 - 1e-9
        if crossing is not None and t > crossing and last_above_lor is not None and t < last_above_lor + 30.0:
            assert v == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([0.5, 1.2]), min_size=1, max_size=40), st.integers(min_value=0, max_value=6000))
def test_lor_hold_property(pattern, tail):
    s = INJECTING
    t_ns = 0
    dt_ns = 250_000
    last = None
    for mag in pattern + [0.5] * tail:
        s, _ = step_protection(s, mag, False, False, t_ns / 1e9, SETTINGS, RATING)
        if mag > SETTINGS.i_lor_ka:
            last = t_ns
        if last is not None:
            if t_ns < last + 1_000_000_000:
                assert s.mode is Mode.LOR_BYPASS
            else:
                assert s.mode is Mode.INJECTION
        t_ns += dt_ns
