from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from seriescomp.calibrate import (
    CalibrationTargets,
    _reactance_for,
    bisect_angle,
    calibrate,
    calibrated_params,
    n1_spec,
    two_source_current,
)
from seriescomp.fixtures import HEALTHY_LINE, GcmParameters
from seriescomp.scenario import run

PARAMS = GcmParameters()


def test_default_targets_feasible(calibration):
    assert calibration.feasible, calibration.messages
    assert 0.80 <= calibration.predicted_post_ka <= 0.85
    assert calibration.predicted_with_devices_ka < 0.70
    for line_id, (lo, hi) in CalibrationTargets().prefault_bands_ka.items():
        assert lo <= calibration.prefault_ka[line_id] <= hi


def test_deterministic(calibration):
    again = calibrate(confirm=False)
    assert again.angle_spread_rad == calibration.angle_spread_rad
    assert again.as_dict() == calibration.as_dict()


def test_bisection_hits_target():
    angle = bisect_angle(PARAMS, 0.825, math.radians(60))
    assert two_source_current(PARAMS, angle) == pytest.approx(0.825, rel=1e-12)


def test_closed_form_matches_solver_on_n1():
    angle, _ = calibrated_params()
    res = run(n1_spec(PARAMS, angle, devices=False, t_end_s=0.01))
    i = res.trace.column(f"{HEALTHY_LINE}.A.i_mag_kA")[-1]
    assert i == pytest.approx(two_source_current(PARAMS, angle), rel=1e-9)


def test_zero_angle_limit_is_infeasible():
    res = calibrate(CalibrationTargets(max_angle_deg=0.0), confirm=False)
    assert not res.feasible
    lo, hi = res.achievable_post_ka
    assert lo == hi == 0.0
    assert "0.0000" in res.messages[0] and "target 0.8250" in res.messages[0]


def test_inconsistent_targets_raise():
    with pytest.raises(ValueError, match="thermal_limit_ka"):
        calibrate(CalibrationTargets(with_devices_max_ka=0.9), confirm=False)


def test_too_little_reactance_reports_need():
    weak = replace(PARAMS, x_set_sm_tc=0.1)
    res = calibrate(params=weak, confirm=False)
    assert not res.feasible
    need = _reactance_for(weak, res.angle_spread_rad, 0.70)
    assert two_source_current(weak, res.angle_spread_rad, need) == pytest.approx(0.70, rel=1e-9)
    assert any(f"{need:.3f} ohm" in m for m in res.messages)


def test_calibrated_params_raises_when_infeasible():
    with pytest.raises(ValueError):
        calibrated_params(CalibrationTargets(max_angle_deg=1.0))


def test_zero_setpoint_devices_are_invisible():
    """Deployments commanded to 0 ohm leave every current bit-identical."""
    angle, _ = calibrated_params()
    zero = replace(PARAMS, x_set_sm_tc=0.0, x_set_sm_gj=0.0)
    on = run(n1_spec(zero, angle, devices=True, t_end_s=0.2)).trace
    off = run(n1_spec(zero, angle, devices=False, t_end_s=0.2)).trace
    for name in on.columns:
        if name.endswith(("i_mag_kA", "i_ang_rad", "vinj_mag_kV")):
            assert np.array_equal(on.column(name), off.column(name)), name


def test_confirmed_calibration():
    res = calibrate()
    assert res.feasible, res.messages
    assert res.simulated_post_ka == pytest.approx(res.predicted_post_ka, rel=1e-6)
    assert res.simulated_with_devices_ka < 0.70
