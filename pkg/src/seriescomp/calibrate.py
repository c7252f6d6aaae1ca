"""Calibration of the four-bus corridor fixture.

The only free parameter searched is the angle by which the northern
equivalent leads Termocol.  With SM-GJ out of service the
SM-TC current follows a closed two-source loop, so the search is a plain
bisection on that closed form; the result is then confirmed on the full
three-phase solver with the scenario engine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .device import CommandMode
from .fixtures import FAULTED_LINE, HEALTHY_LINE, GcmParameters, gcm_deployments, gcm_network, gcm_relays
from .network import NetworkState, solve_step
from .deployment import FeatureFlags
from .scenario import EventKind, ScenarioEvent, ScenarioSpec, run

BISECTION_STEPS = 60


@dataclass(frozen=True)
class CalibrationTargets:
    # pre-contingency SM-GJ and SM-TC currents, kA
    prefault_bands_ka: dict = field(
        default_factory=lambda: {FAULTED_LINE: (0.1, 0.9), HEALTHY_LINE: (0.1, 0.787)}
    )
    post_min_ka: float = 0.80
    post_max_ka: float = 0.85
    with_devices_max_ka: float = 0.70
    thermal_limit_ka: float = 0.787
    max_angle_deg: float = 60.0

    def violations(self) -> list[str]:
        errors = []
        if not self.with_devices_max_ka < self.thermal_limit_ka < self.post_min_ka:
            errors.append("with_devices_max_ka < thermal_limit_ka < post_min_ka must hold")
        if not self.post_min_ka < self.post_max_ka:
            errors.append("post_min_ka must be below post_max_ka")
        if not 0.0 <= self.max_angle_deg < 180.0:
            errors.append("max_angle_deg must lie in [0, 180)")
        for line_id, band in self.prefault_bands_ka.items():
            if len(band) != 2 or not band[0] <= band[1]:
                errors.append(f"prefault_bands_ka.{line_id}: expected [low, high]")
        return errors

    @property
    def post_target_ka(self) -> float:
        return 0.5 * (self.post_min_ka + self.post_max_ka)


@dataclass
class CalibrationResult:
    angle_spread_rad: float
    params: GcmParameters
    feasible: bool
    # closed-form predictions and solver/scenario confirmations, kA
    predicted_post_ka: float = math.nan
    predicted_with_devices_ka: float = math.nan
    prefault_ka: dict = field(default_factory=dict)
    simulated_post_ka: float = math.nan
    simulated_with_devices_ka: float = math.nan
    achievable_post_ka: tuple[float, float] = (math.nan, math.nan)
    messages: list[str] = field(default_factory=list)

    @property
    def angle_spread_deg(self) -> float:
        return math.degrees(self.angle_spread_rad)

    def as_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "angle_spread_rad": self.angle_spread_rad,
            "angle_spread_deg": self.angle_spread_deg,
            "predicted_post_kA": self.predicted_post_ka,
            "predicted_with_devices_kA": self.predicted_with_devices_ka,
            "prefault_kA": dict(self.prefault_ka),
            "simulated_post_kA": self.simulated_post_ka,
            "simulated_with_devices_kA": self.simulated_with_devices_ka,
            "achievable_post_kA": list(self.achievable_post_ka),
            "messages": list(self.messages),
        }


def total_reactance(params: GcmParameters) -> float:
    """Series reactance of the whole SM-TC deployment per phase (ohm)."""
    return params.x_set_sm_tc * params.devices_sm_tc


def two_source_current(params: GcmParameters, angle_rad: float, x_series: float = 0.0) -> float:
    """|I| (kA) around EQ -> SM -> TC with SM-GJ open: |E (e^{j d} - 1)| / |Z_loop + j X|."""
    e = params.emf_kv
    drive = abs(e * (complex(math.cos(angle_rad), math.sin(angle_rad)) - 1.0))
    return drive / abs(params.healthy_loop_z() + 1j * x_series)


def two_source_power(e1: float, e2: float, x: float, angle_rad: float) -> float:
    """Per-phase active power (MW) across a lossless reactance."""
    return e1 * e2 / x * math.sin(angle_rad)


def bisect_angle(params: GcmParameters, target_ka: float, hi_rad: float) -> float:
    """Smallest angle in [0, hi] whose closed-form current reaches ``target_ka``."""
    lo, hi = 0.0, hi_rad
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if two_source_current(params, mid) < target_ka:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def prefault_currents(params: GcmParameters, angle_rad: float) -> dict[str, float]:
    sol = solve_step(gcm_network(angle_rad, params), NetworkState())
    return {lid: abs(sol.branch_current(lid).a) for lid in (FAULTED_LINE, HEALTHY_LINE)}


def n1_spec(params: GcmParameters, angle_rad: float, devices: bool, t_end_s: float = 1.5) -> ScenarioSpec:
    """SM-GJ opened at t = 0 without a fault; used to confirm the steady N-1 current."""
    network = gcm_network(angle_rad, params)
    line = network.line(FAULTED_LINE)
    events = tuple(
        ScenarioEvent(0.0, EventKind.OPEN_BREAKER, (b, (0, 1, 2))) for b in (line.breaker_from, line.breaker_to)
    )
    return ScenarioSpec(
        network=network,
        deployments=gcm_deployments(params, command_mode=CommandMode.FIXED_REACTANCE),
        relays=gcm_relays(network),
        t_end_s=t_end_s,
        events=events,
        feature_flags=FeatureFlags(devices_enabled=devices),
        name=f"n1_{'devices' if devices else 'bare'}",
    )


def simulated_n1_current(params: GcmParameters, angle_rad: float, devices: bool) -> float:
    result = run(n1_spec(params, angle_rad, devices))
    return max(result.summary["lines"][HEALTHY_LINE]["final_window_mean_i_kA"])


def calibrate(
    targets: CalibrationTargets = CalibrationTargets(),
    params: GcmParameters = GcmParameters(),
    confirm: bool = True,
) -> CalibrationResult:
    """Angle spread meeting ``targets`` on the fixture topology.

    Infeasible targets give ``feasible=False`` with the achievable range.
    """
    problems = targets.violations()
    if problems:
        raise ValueError("inconsistent targets: " + "; ".join(problems))
    hi = math.radians(targets.max_angle_deg)
    achievable = (two_source_current(params, 0.0), two_source_current(params, hi))
    result = CalibrationResult(0.0, params, False, achievable_post_ka=achievable)
    if not achievable[0] <= targets.post_target_ka <= achievable[1]:
        result.messages.append(
            f"post-contingency SM-TC current reaches only [{achievable[0]:.4f}, {achievable[1]:.4f}] kA "
            f"for angle spreads in [0, {targets.max_angle_deg:g}] deg; target {targets.post_target_ka:.4f} kA"
        )
        return result

    angle = bisect_angle(params, targets.post_target_ka, hi)
    result.angle_spread_rad = angle
    result.predicted_post_ka = two_source_current(params, angle)
    x_total = total_reactance(params)
    result.predicted_with_devices_ka = two_source_current(params, angle, x_total)
    result.prefault_ka = prefault_currents(params, angle)
    ok = True
    if not targets.post_min_ka <= result.predicted_post_ka <= targets.post_max_ka:
        ok = False
        result.messages.append(f"post-contingency current {result.predicted_post_ka:.4f} kA outside the band")
    if not result.predicted_with_devices_ka < targets.with_devices_max_ka:
        ok = False
        need = _reactance_for(params, angle, targets.with_devices_max_ka)
        result.messages.append(
            f"with {x_total:g} ohm of series reactance the current is {result.predicted_with_devices_ka:.4f} kA; "
            f"at least {need:.3f} ohm is needed to go below {targets.with_devices_max_ka:g} kA"
        )
    if abs(params.limit_sm_tc_a / 1000.0 - targets.thermal_limit_ka) > 1e-9:
        ok = False
        result.messages.append(
            f"fixture SM-TC thermal limit {params.limit_sm_tc_a:g} A differs from the target {targets.thermal_limit_ka:g} kA"
        )
    for line_id, (lo, hi_band) in targets.prefault_bands_ka.items():
        i = result.prefault_ka.get(line_id)
        if i is None or not lo <= i <= hi_band:
            ok = False
            result.messages.append(f"pre-fault current on {line_id} is {i} kA, outside [{lo}, {hi_band}]")
    if ok and confirm:
        result.simulated_post_ka = simulated_n1_current(params, angle, devices=False)
        result.simulated_with_devices_ka = simulated_n1_current(params, angle, devices=True)
        if not targets.post_min_ka <= result.simulated_post_ka <= targets.post_max_ka:
            ok = False
            result.messages.append(f"simulated post-contingency current {result.simulated_post_ka:.4f} kA outside the band")
        if not result.simulated_with_devices_ka < targets.with_devices_max_ka:
            ok = False
            result.messages.append(f"simulated current with devices {result.simulated_with_devices_ka:.4f} kA too high")
    result.feasible = ok
    return result


def _reactance_for(params: GcmParameters, angle: float, limit_ka: float) -> float:
    """Series reactance bringing the closed-form current down to ``limit_ka``."""
    z = params.healthy_loop_z()
    e = params.emf_kv
    drive = abs(e * (complex(math.cos(angle), math.sin(angle)) - 1.0))
    # |R + j(X0 + x)| = drive / limit
    mag = drive / limit_ka
    if mag <= abs(z.real):
        return math.inf
    return math.sqrt(mag * mag - z.real * z.real) - z.imag


def calibrated_params(targets: CalibrationTargets = CalibrationTargets(), params: GcmParameters = GcmParameters()):
    """``(angle_rad, params)`` without the simulation confirmation; raises if infeasible."""
    res = calibrate(targets, params, confirm=False)
    if not res.feasible:
        raise ValueError("; ".join(res.messages))
    return res.angle_spread_rad, params
