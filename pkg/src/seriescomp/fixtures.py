"""Desk-scale fixture of the Guajira - Santa Marta - Termocol corridor.

Four buses: Santa Marta (SM), Termoguajira (GJ), Termocol (TC) and a
northern network equivalent (EQ) feeding SM.  EQ leads TC by the angle
spread, so losing SM-GJ pushes the whole SM export onto SM-TC.  GJ sits
behind a weak source lagging TC, so the contingency also rotates the
SM-TC current angle; a slow angle tracker then visibly lags it.
Impedances are fixture choices; the angle spread comes from calibration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .deployment import DeploymentConfig, FeatureFlags
from .device import AngleTrackerSettings, CommandMode, InjectionCommand, Polarity
from .network import Bus, Line, NetworkModel, Source, ThreePhaseSet
from .relay import RelaySettings, Zone
from .scenario import EventKind, FaultSpec, FaultType, ScenarioEvent, ScenarioSpec

FAULTED_LINE = "SM_GJ"
HEALTHY_LINE = "SM_TC"
TIE_LINE = "EQ_SM"

FAULT_TIME_S = 1.0
FAULT = FaultSpec(FAULTED_LINE, position=0.5, type=FaultType.THREE_PHASE, phases="ABC", r_fault_ohm=5.0, duration_s=1.5)


@dataclass(frozen=True)
class GcmParameters:
    v_ll_kv: float = 220.0
    z_sm_gj: complex = 2 + 30j
    z_sm_tc: complex = 2 + 20j
    z_tie: complex = 1 + 15j
    z_src_eq: complex = 10j
    z_src_gj: complex = 80j
    z_src_tc: complex = 10j
    # GJ source angle relative to TC (deg); GJ is isolated after the contingency
    gj_angle_deg: float = -40.0
    limit_sm_gj_a: float = 900.0
    limit_sm_tc_a: float = 787.0
    limit_tie_a: float = 3000.0
    # per modeled device set-points (ohm); totals are these times physical count
    x_set_sm_gj: float = 2.0
    x_set_sm_tc: float = 3.0
    devices_sm_gj: int = 3
    devices_sm_tc: int = 5

    @property
    def emf_kv(self) -> float:
        return self.v_ll_kv / math.sqrt(3.0)

    def healthy_loop_z(self) -> complex:
        """Series impedance of the EQ -> SM -> TC path once SM-GJ is open."""
        return self.z_src_eq + self.z_tie + self.z_sm_tc + self.z_src_tc


def gcm_network(angle_spread_rad: float, params: GcmParameters = GcmParameters()) -> NetworkModel:
    e = params.emf_kv
    return NetworkModel(
        buses=(
            Bus("SM", "Santa Marta 220 kV"),
            Bus("GJ", "Termoguajira 220 kV"),
            Bus("TC", "Termocol 220 kV"),
            Bus("EQ", "Northern equivalent"),
        ),
        lines=(
            Line(FAULTED_LINE, "SM", "GJ", params.z_sm_gj, params.limit_sm_gj_a, "SM_GJ.SM", "SM_GJ.GJ"),
            Line(HEALTHY_LINE, "SM", "TC", params.z_sm_tc, params.limit_sm_tc_a, "SM_TC.SM", "SM_TC.TC"),
            Line(TIE_LINE, "EQ", "SM", params.z_tie, params.limit_tie_a, "EQ_SM.EQ", "EQ_SM.SM"),
        ),
        sources=(
            Source("EQ", ThreePhaseSet.balanced(e, angle_spread_rad), params.z_src_eq),
            Source("GJ", ThreePhaseSet.balanced(e, math.radians(params.gj_angle_deg)), params.z_src_gj),
            Source("TC", ThreePhaseSet.balanced(e, 0.0), params.z_src_tc),
        ),
    )


def line_relays(line: Line) -> tuple[RelaySettings, RelaySettings]:
    """Two-zone relays at both ends: 80 % instantaneous, 120 % at 0.3 s."""
    zones = (Zone(0.8 * line.series_z, 0.0), Zone(1.2 * line.series_z, 0.3))
    return (
        RelaySettings(id=f"{line.id}@{line.from_bus}", line_id=line.id, terminal="from", zones=zones),
        RelaySettings(id=f"{line.id}@{line.to_bus}", line_id=line.id, terminal="to", zones=zones),
    )


def gcm_relays(model: NetworkModel) -> tuple[RelaySettings, ...]:
    out = []
    for line_id in (FAULTED_LINE, HEALTHY_LINE):
        out.extend(line_relays(model.line(line_id)))
    return tuple(out)


def gcm_deployments(
    params: GcmParameters = GcmParameters(),
    modeled_sm_gj: int = 3,
    modeled_sm_tc: int = 1,
    hil_line: str | None = None,
    command_mode: CommandMode = CommandMode.FIXED_REACTANCE,
    tracker_tau_s: float | None = None,
) -> tuple[DeploymentConfig, ...]:
    """Deployments on both lines; each modeled device stands for ``scale`` physical ones."""
    out = []
    for line_id, physical, modeled, x_set in (
        (FAULTED_LINE, params.devices_sm_gj, modeled_sm_gj, params.x_set_sm_gj),
        (HEALTHY_LINE, params.devices_sm_tc, modeled_sm_tc, params.x_set_sm_tc),
    ):
        if physical % modeled:
            raise ValueError(f"{physical} devices cannot be split into {modeled} equal models")
        if command_mode is CommandMode.FIXED_VOLTAGE:
            # roughly the pre-fault injection of the reactance set-point
            cmd = InjectionCommand(CommandMode.FIXED_VOLTAGE, v_set_kv=x_set * 0.6, polarity=Polarity.INDUCTIVE)
        else:
            cmd = InjectionCommand(CommandMode.FIXED_REACTANCE, x_set_ohm=x_set)
        cfg = DeploymentConfig(
            line_id=line_id,
            devices_per_phase=modeled,
            scale_factor=physical // modeled,
            command=cmd,
            hil=line_id == hil_line,
        )
        if tracker_tau_s is not None:
            cfg = replace(cfg, tracker=AngleTrackerSettings(tracker_tau_s))
        out.append(cfg)
    return tuple(out)


CASE_FLAGS = {
    1: FeatureFlags(devices_enabled=False),
    2: FeatureFlags(oc_enabled=False, lor_enabled=False, ipb_enabled=False, backup_lor_enabled=False),
    3: FeatureFlags(),
}


def case_spec(
    case: int,
    network: NetworkModel,
    params: GcmParameters = GcmParameters(),
    t_end_s: float = 40.0,
    dt_s: float = 250e-6,
    **deployment_kw,
) -> ScenarioSpec:
    """Scenario for one of the three published cases on the calibrated network."""
    if case == 2:
        deployment_kw.setdefault("command_mode", CommandMode.FIXED_VOLTAGE)
        deployment_kw.setdefault("tracker_tau_s", 0.5)
    return ScenarioSpec(
        network=network,
        deployments=gcm_deployments(params, **deployment_kw),
        relays=gcm_relays(network),
        dt_s=dt_s,
        t_end_s=t_end_s,
        events=(ScenarioEvent(FAULT_TIME_S, EventKind.APPLY_FAULT, FAULT),),
        feature_flags=CASE_FLAGS[case],
        name=f"case{case}",
    )
