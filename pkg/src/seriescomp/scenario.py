"""Fixed-step simulation loop: events, solve, sense, logic, actuate.

Every decision taken at step ``k`` acts electrically at step ``k + 1``.
Time is tracked in integer nanoseconds so that deadlines land on exact
steps.
"""
from __future__ import annotations

import cmath
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .deployment import Deployment, DeploymentConfig, FeatureFlags, PHASE_NAMES, default_backup_signals
from .device import InjectionCommand, Mode, NS_PER_S
from .network import FaultShunt, NetworkModel, NetworkSolver, NetworkState, SolverError, ThreePhaseSet
from .relay import RecloseState, RelaySettings, RelayState, measure_loops, step_relay, zone_pickups

log = logging.getLogger(__name__)

FINAL_WINDOW_S = 1.0


class FaultType(str, enum.Enum):
    THREE_PHASE = "three_phase"
    PHASE_GROUND = "phase_ground"
    PHASE_PHASE = "phase_phase"
    PHASE_PHASE_GROUND = "phase_phase_ground"


class EventKind(str, enum.Enum):
    APPLY_FAULT = "apply_fault"
    CLEAR_FAULT = "clear_fault"
    OPEN_BREAKER = "open_breaker"
    CLOSE_BREAKER = "close_breaker"
    SET_INJECTION_COMMAND = "set_injection_command"
    SET_FEATURE_FLAGS = "set_feature_flags"


@dataclass(frozen=True)
class FaultStage:
    """A change of fault type ``after_s`` seconds into the fault."""

    after_s: float
    type: FaultType
    phases: str = ""


@dataclass(frozen=True)
class FaultSpec:
    line_id: str
    position: float = 0.5
    type: FaultType = FaultType.THREE_PHASE
    phases: str = "ABC"
    r_fault_ohm: float = 0.0
    duration_s: float = 0.1
    evolution: tuple[FaultStage, ...] = ()

    def violations(self) -> list[str]:
        errors = []
        if not 0.0 <= self.position <= 1.0:
            errors.append("position must lie in [0, 1]")
        if not (math.isfinite(self.r_fault_ohm) and self.r_fault_ohm >= 0):
            errors.append("r_fault_ohm must be >= 0")
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            errors.append("duration_s must be > 0")
        for k, (ftype, phases) in enumerate([(self.type, self.phases)] + [(s.type, s.phases) for s in self.evolution]):
            try:
                _phase_indices(ftype, phases)
            except ValueError as exc:
                errors.append(f"stage {k}: {exc}")
        return errors


def _phase_indices(ftype: FaultType, phases: str) -> tuple[int, ...]:
    idx = tuple(sorted({"ABC".index(c) for c in phases.upper() if c in "ABC"}))
    if len(idx) != len(phases.replace(" ", "")):
        raise ValueError(f"bad phase list {phases!r}")
    need = {FaultType.THREE_PHASE: None, FaultType.PHASE_GROUND: 1, FaultType.PHASE_PHASE: 2, FaultType.PHASE_PHASE_GROUND: 2}[ftype]
    if ftype is FaultType.THREE_PHASE:
        return (0, 1, 2)
    if len(idx) != need:
        raise ValueError(f"{ftype.value} needs {need} phase(s), got {phases!r}")
    return idx


def fault_shunt(line_id: str, position: float, ftype: FaultType, phases: str, r_fault: float) -> FaultShunt:
    """Shunt network for one fault type: to ground when grounded, between phases otherwise."""
    idx = _phase_indices(ftype, phases)
    z = complex(r_fault)
    if ftype is FaultType.PHASE_PHASE:
        return FaultShunt(line_id, position, (None, None, None), ((idx[0], idx[1], z),))
    phase_z = tuple(z if p in idx else None for p in range(3))
    return FaultShunt(line_id, position, phase_z)


@dataclass(frozen=True)
class ScenarioEvent:
    t_s: float
    kind: EventKind
    payload: Any = None


@dataclass(frozen=True)
class ScenarioSpec:
    network: NetworkModel
    deployments: tuple[DeploymentConfig, ...] = ()
    relays: tuple[RelaySettings, ...] = ()
    dt_s: float = 250e-6
    t_end_s: float = 40.0
    events: tuple[ScenarioEvent, ...] = ()
    feature_flags: FeatureFlags = field(default_factory=FeatureFlags)
    monitored_lines: tuple[str, ...] | None = None
    name: str = ""

    def monitored(self) -> tuple[str, ...]:
        if self.monitored_lines is None:
            return tuple(ln.id for ln in self.network.lines)
        return self.monitored_lines

    def violations(self) -> list[str]:
        """Every semantic problem, as ``path: message`` strings."""
        errors = [f"network: {e}" for e in self.network.violations()]
        if not (math.isfinite(self.dt_s) and self.dt_s > 0):
            errors.append("dt_s: must be > 0")
        if not (math.isfinite(self.t_end_s) and self.t_end_s >= 0):
            errors.append("t_end_s: must be >= 0")
        lines = {ln.id for ln in self.network.lines}
        breakers = set(self.network.breaker_ids())
        relay_ids = [r.id for r in self.relays]
        if len(set(relay_ids)) != len(relay_ids):
            errors.append("relays: duplicate relay id")
        relay_by_id = {r.id: r for r in self.relays}
        for k, r in enumerate(self.relays):
            if r.line_id not in lines:
                errors.append(f"relays[{k}].line_id: unknown line {r.line_id!r}")
            errors.extend(f"relays[{k}]: {e}" for e in r.violations())
        dep_ids = [d.id for d in self.deployments]
        if len(set(dep_ids)) != len(dep_ids):
            errors.append("deployments: duplicate deployment id")
        for k, d in enumerate(self.deployments):
            if d.line_id not in lines:
                errors.append(f"deployments[{k}].line_id: unknown line {d.line_id!r}")
            errors.extend(f"deployments[{k}].{e}" for e in d.violations())
            for rid, sig in d.backup_lor_signals or ():
                relay = relay_by_id.get(rid)
                if relay is None:
                    errors.append(f"deployments[{k}].backup_lor_signals: unknown relay {rid!r}")
                elif sig not in relay.signal_names():
                    errors.append(f"deployments[{k}].backup_lor_signals: unknown signal {sig!r} for relay {rid!r}")
        for line_id in self.monitored_lines or ():
            if line_id not in lines:
                errors.append(f"monitored_lines: unknown line {line_id!r}")
        last = -math.inf
        for k, ev in enumerate(self.events):
            path = f"events[{k}]"
            if ev.t_s < last:
                errors.append(f"{path}.t_s: events must be time-sorted")
            last = ev.t_s
            if ev.kind is EventKind.APPLY_FAULT:
                if ev.payload.line_id not in lines:
                    errors.append(f"{path}.fault.line_id: unknown line {ev.payload.line_id!r}")
                errors.extend(f"{path}.fault: {e}" for e in ev.payload.violations())
            elif ev.kind is EventKind.CLEAR_FAULT:
                if ev.payload not in lines:
                    errors.append(f"{path}.line_id: unknown line {ev.payload!r}")
            elif ev.kind in (EventKind.OPEN_BREAKER, EventKind.CLOSE_BREAKER):
                breaker, _ = ev.payload
                if breaker not in breakers:
                    errors.append(f"{path}.breaker: unknown breaker {breaker!r}")
            elif ev.kind is EventKind.SET_INJECTION_COMMAND:
                dep, _ = ev.payload
                if dep not in dep_ids:
                    errors.append(f"{path}.deployment: unknown deployment {dep!r}")
        return errors


class ScenarioError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid scenario:\n  " + "\n  ".join(violations))
        self.violations = violations


class RunFailure(RuntimeError):
    def __init__(self, message: str, t_s: float, step: int):
        super().__init__(f"{message} (t={t_s:.6f} s, step {step})")
        self.t_s = t_s
        self.step = step


@dataclass(frozen=True)
class EventRecord:
    t_s: float
    source: str
    name: str
    detail: str = ""


@dataclass
class Trace:
    """One row per step.  ``csv_columns`` is the persisted subset."""

    columns: list[str]
    csv_columns: list[str]
    int_columns: set[str]
    data: np.ndarray

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.column("t_s")

    def vinj(self, line_id: str, phase: str) -> np.ndarray:
        return self.column(f"{line_id}.{phase}.vinj_re") + 1j * self.column(f"{line_id}.{phase}.vinj_im")

    def current(self, line_id: str, phase: str) -> np.ndarray:
        mag = self.column(f"{line_id}.{phase}.i_mag_kA")
        ang = self.column(f"{line_id}.{phase}.i_ang_rad")
        return mag * np.exp(1j * ang)


@dataclass
class RunResult:
    trace: Trace
    events: list[EventRecord]
    summary: dict
    status: str = "completed"


@dataclass
class _ActiveFault:
    spec: FaultSpec
    stage: int = 0


class World:
    """Mutable simulation state for one run."""

    def __init__(self, spec: ScenarioSpec, hil_factory: Callable[[DeploymentConfig, ScenarioSpec], Any] | None = None):
        errors = spec.violations()
        if errors:
            raise ScenarioError(errors)
        self.spec = spec
        self.model = spec.network
        self.solver = NetworkSolver(spec.network)
        self.dt_ns = round(spec.dt_s * NS_PER_S)
        self.flags = spec.feature_flags
        self.k = 0
        self.lines = {ln.id: ln for ln in spec.network.lines}
        self.breakers: dict[str, tuple[bool, bool, bool]] = {b: (True, True, True) for b in spec.network.breaker_ids()}
        self.pending_open: dict[str, int] = {}
        self.pending_close: set[str] = set()
        self.faults: dict[str, _ActiveFault] = {}
        self.injections: dict[tuple[str, int], complex] = {}
        self.state = NetworkState(breakers=dict(self.breakers))
        self.relays = list(spec.relays)
        self.relay_states = [RelayState.initial(r) for r in self.relays]
        self.relay_quiet: list = [None] * len(self.relays)
        self.monitored = spec.monitored()
        self.breaker_ids = spec.network.breaker_ids()
        self.relay_breaker = [
            self.lines[r.line_id].breaker_from if r.terminal == "from" else self.lines[r.line_id].breaker_to
            for r in self.relays
        ]
        self.relay_signals: dict[str, dict[str, bool]] = {r.id: {} for r in self.relays}
        self.deployments = []
        for cfg in spec.deployments:
            wiring = cfg.backup_lor_signals
            if wiring is None:
                wiring = default_backup_signals((r.id, len(r.zones)) for r in self.relays if r.line_id == cfg.line_id)
            hil = hil_factory(cfg, spec) if (cfg.hil and hil_factory is not None) else None
            self.deployments.append(Deployment(cfg, wiring, hil))
        self.dep_by_line = {d.cfg.line_id: d for d in self.deployments}
        # (t_ns, seq, kind, payload) pending scripted and automatic events
        self.queue: list[tuple[int, int, EventKind, Any]] = []
        for n, ev in enumerate(spec.events):
            self.queue.append((round(ev.t_s * NS_PER_S), n, ev.kind, ev.payload))
        self._seq = len(self.queue)
        self.queue.sort(key=lambda e: (e[0], e[1]))
        self.events: list[EventRecord] = []
        # solved steps by (faults, breakers, injections); steady states revisit a few keys
        self._solve_cache: dict = {}

    @property
    def t_ns(self) -> int:
        return self.k * self.dt_ns

    def _emit(self, t_s: float, source: str, name: str, detail: str = "") -> None:
        self.events.append(EventRecord(t_s, source, name, detail))

    def _schedule(self, t_ns: int, kind: EventKind, payload: Any) -> None:
        self.queue.append((t_ns, self._seq, kind, payload))
        self._seq += 1
        self.queue.sort(key=lambda e: (e[0], e[1]))

    # ---- phase 1 -------------------------------------------------------
    def apply_due_events(self) -> None:
        t_ns = self.t_ns
        t_s = t_ns / NS_PER_S
        while self.queue and self.queue[0][0] <= t_ns:
            _, _, kind, payload = self.queue.pop(0)
            if kind is EventKind.APPLY_FAULT:
                apply_fault(self, payload)
            elif kind is EventKind.CLEAR_FAULT:
                clear_fault(self, payload)
            elif kind == "fault_stage":
                line_id, stage = payload
                active = self.faults.get(line_id)
                if active is not None:
                    active.stage = stage
                    st = active.spec.evolution[stage - 1]
                    self._emit(t_s, line_id, "fault_evolve", f"{st.type.value} {st.phases}")
            elif kind is EventKind.OPEN_BREAKER:
                breaker, phases = payload
                pos = list(self.breakers[breaker])
                for p in phases:
                    pos[p] = False
                self.breakers[breaker] = tuple(pos)
                self._emit(t_s, breaker, "breaker_open", "scripted")
            elif kind is EventKind.CLOSE_BREAKER:
                breaker, phases = payload
                pos = list(self.breakers[breaker])
                for p in phases:
                    pos[p] = True
                self.breakers[breaker] = tuple(pos)
                self._emit(t_s, breaker, "breaker_close", "scripted")
            elif kind is EventKind.SET_INJECTION_COMMAND:
                dep_id, cmd = payload
                for d in self.deployments:
                    if d.cfg.id == dep_id:
                        d.command = cmd
                self._emit(t_s, dep_id, "set_injection_command", cmd.mode.value)
            elif kind is EventKind.SET_FEATURE_FLAGS:
                self.flags = replace(self.flags, **payload)
                self._emit(t_s, "scenario", "set_feature_flags", ",".join(f"{k}={v}" for k, v in sorted(payload.items())))

    def fault_shunts(self) -> tuple[FaultShunt, ...]:
        out = []
        for line_id in sorted(self.faults):
            active = self.faults[line_id]
            f = active.spec
            if active.stage == 0:
                ftype, phases = f.type, f.phases
            else:
                st = f.evolution[active.stage - 1]
                ftype, phases = st.type, st.phases
            out.append(fault_shunt(line_id, f.position, ftype, phases, f.r_fault_ohm))
        return tuple(out)


def apply_fault(world: World, f: FaultSpec) -> None:
    """Attach a fault; its removal and any evolution stages are auto-scheduled."""
    if f.line_id not in world.lines:
        raise ScenarioError([f"fault on unknown line {f.line_id!r}"])
    t_ns = world.t_ns
    world.faults[f.line_id] = _ActiveFault(f)
    world._emit(t_ns / NS_PER_S, f.line_id, "fault_applied", f"{f.type.value} {f.phases} p={f.position:g} rf={f.r_fault_ohm:g}")
    for n, stage in enumerate(f.evolution, start=1):
        world._schedule(t_ns + round(stage.after_s * NS_PER_S), "fault_stage", (f.line_id, n))
    world._schedule(t_ns + round(f.duration_s * NS_PER_S), EventKind.CLEAR_FAULT, f.line_id)


def clear_fault(world: World, line_id: str) -> None:
    """Remove the fault on a line; breaker positions are untouched."""
    if world.faults.pop(line_id, None) is not None:
        world._emit(world.t_ns / NS_PER_S, line_id, "fault_cleared", "")


_SOLVE_CACHE_SIZE = 256
_QUIET_RECLOSE = (RecloseState.IDLE, RecloseState.LOCKED_OUT)


def step_simulation(world: World, trace_row: list | None = None):
    """Advance the world by one step and return the step's solution."""
    t_ns = world.t_ns
    t_s = t_ns / NS_PER_S
    dt_s = world.dt_ns / NS_PER_S
    flags = world.flags

    # (1) scheduled events act on the state committed below
    world.apply_due_events()

    # (2) solve with the state frozen at the end of the previous step
    state = world.state
    key = (state.faults, tuple(state.breakers.items()), tuple(state.injections.items()))
    cached = world._solve_cache.get(key)
    if cached is None:
        try:
            sol = world.solver.solve(state)
        except SolverError as exc:
            raise RunFailure(f"solver failure: {exc} island={exc.island}", t_s, world.k) from exc
        if len(world._solve_cache) >= _SOLVE_CACHE_SIZE:
            world._solve_cache.clear()
        cached = world._solve_cache[key] = (sol, {})
    sol, loop_cache = cached

    # (3) sensing
    line_index = {lid: k for k, lid in enumerate(sol.line_ids)}
    bus_index = {bid: k for k, bid in enumerate(sol.bus_ids)}
    send, recv, volt = sol.send, sol.recv, sol.voltages

    # (4) logic: relays, then deployments (devices inside)
    commands = []
    for r_idx, settings in enumerate(world.relays):
        line = world.lines[settings.line_id]
        li = line_index[settings.line_id]
        if settings.terminal == "from":
            bi = bus_index[line.from_bus]
            i_abc = ThreePhaseSet(send[0][li], send[1][li], send[2][li])
        else:
            bi = bus_index[line.to_bus]
            i_abc = ThreePhaseSet(-recv[0][li], -recv[1][li], -recv[2][li])
        cached_loops = loop_cache.get(r_idx)
        if cached_loops is None:
            v_abc = ThreePhaseSet(volt[0][bi], volt[1][bi], volt[2][bi])
            loops = measure_loops(v_abc, i_abc, settings.k0, settings.min_current_ka)
            cached_loops = loop_cache[r_idx] = (loops, any(zone_pickups(loops, settings)))
        loops, picked = cached_loops
        breaker = world.relay_breaker[r_idx]
        poles = world.state.breaker(breaker)
        rstate = world.relay_states[r_idx]
        quiet = world.relay_quiet[r_idx]
        if quiet is not None and not picked and quiet[0] == poles and quiet[1] is rstate:
            # an idle relay that sees nothing inside its zones stays as it is
            cmds, signals, revents = (), rstate.signals, ()
        else:
            rstate, cmds, signals, revents = step_relay(rstate, loops, t_s, settings, poles)
            idle = rstate.reclose_state in _QUIET_RECLOSE and not rstate.trip_asserted and not any(rstate.pickups)
            world.relay_quiet[r_idx] = (poles, rstate) if idle else None
        world.relay_states[r_idx] = rstate
        world.relay_signals[settings.id] = signals
        for name in revents:
            world._emit(t_s, settings.id, name, "")
        for c in cmds:
            commands.append((r_idx, breaker, c))

    new_injections: dict[tuple[str, int], complex] = {}
    for dep in world.deployments:
        li = line_index[dep.cfg.line_id]
        currents = (send[0][li], send[1][li], send[2][li])
        inj, devents = dep.step(currents, world.relay_signals, t_s, dt_s, flags)
        for src, name, detail in devents:
            world._emit(t_s, src, name, detail)
        for p in range(3):
            if inj[p]:
                new_injections[(dep.cfg.line_id, p)] = inj[p]

    if trace_row is not None:
        _fill_row(world, sol, t_s, trace_row, line_index, loop_cache)

    # (5) commit actuation for the next step
    for r_idx, breaker, c in commands:
        settings = world.relays[r_idx]
        if c == "open":
            if any(world.breakers[breaker]) and breaker not in world.pending_open:
                world.pending_open[breaker] = t_ns + round(settings.breaker_operate_delay_s * NS_PER_S)
                world._emit(t_s, settings.id, "open_command", breaker)
        elif c == "close":
            world.pending_open.pop(breaker, None)
            world.pending_close.add(breaker)
    for breaker in sorted(world.pending_open):
        if world.pending_open[breaker] <= t_ns:
            del world.pending_open[breaker]
            if any(world.breakers[breaker]):
                world.breakers[breaker] = (False, False, False)
                world._emit(t_s, breaker, "breaker_open", "relay")
    for breaker in sorted(world.pending_close):
        if not all(world.breakers[breaker]):
            world.breakers[breaker] = (True, True, True)
            world._emit(t_s, breaker, "breaker_close", "reclose")
    world.pending_close.clear()
    world.injections = new_injections
    world.state = NetworkState(breakers=dict(world.breakers), faults=world.fault_shunts(), injections=new_injections)
    world.k += 1
    return sol


def trace_columns(spec: ScenarioSpec) -> tuple[list[str], list[str], set[str]]:
    csv_cols = ["t_s"]
    hidden = []
    ints = set()
    for line_id in spec.monitored():
        for ph in PHASE_NAMES:
            base = f"{line_id}.{ph}"
            csv_cols += [f"{base}.i_mag_kA", f"{base}.i_ang_rad", f"{base}.vinj_mag_kV", f"{base}.device_state_code"]
            ints.add(f"{base}.device_state_code")
            hidden += [f"{base}.vinj_re", f"{base}.vinj_im"]
    for r in spec.relays:
        for z in range(len(r.zones)):
            csv_cols.append(f"{r.id}.zone{z + 1}_pickup")
            ints.add(csv_cols[-1])
        csv_cols += [f"{r.id}.trip", f"{r.id}.recloser_state"]
        ints.update(csv_cols[-2:])
    for b in spec.network.breaker_ids():
        csv_cols.append(f"{b}.position")
        ints.add(csv_cols[-1])
    hidden.append("kcl_residual")
    return csv_cols + hidden, csv_cols, ints


def _fill_row(world: World, sol, t_s: float, row: list, line_index: dict[str, int], cache: dict) -> None:
    flags = world.flags
    codes = tuple(
        world.dep_by_line[lid].phase_codes(flags) if lid in world.dep_by_line else (-1, -1, -1)
        for lid in world.monitored
    )
    # the line block depends only on the solution (which fixes the injections) and the state codes
    lines_part = cache.get(codes)
    if lines_part is None:
        shown = []
        hidden = []
        for line_id, line_codes in zip(world.monitored, codes):
            li = line_index[line_id]
            for p in range(3):
                i = sol.send[p][li]
                v = world.state.injections.get((line_id, p), 0j)
                shown += [abs(i), cmath.phase(i), abs(v), line_codes[p]]
                hidden += [v.real, v.imag]
        lines_part = cache[codes] = (shown, hidden + [sol.kcl_residual_max])
    row.clear()
    row.append(t_s)
    row += lines_part[0]
    for st in world.relay_states:
        row += st.pickups
        row.append(st.trip_asserted)
        row.append(int(st.reclose_state))
    for a, bb, c in map(world.state.breaker, world.breaker_ids):
        row.append(a | (bb << 1) | (c << 2))
    row += lines_part[1]


def n_steps(spec: ScenarioSpec) -> int:
    dt_ns = round(spec.dt_s * NS_PER_S)
    t_end_ns = round(spec.t_end_s * NS_PER_S)
    return -(-t_end_ns // dt_ns)


def run(spec: ScenarioSpec, hil_factory=None, progress: Callable[[int, int], None] | None = None) -> RunResult:
    """Run a scenario to completion (or until the co-simulation link ends)."""
    from .cosim.link import LinkClosed, LinkError, default_hil_factory

    if hil_factory is None and any(d.hil for d in spec.deployments):
        hil_factory = default_hil_factory()
    world = World(spec, hil_factory)
    columns, csv_columns, ints = trace_columns(spec)
    total = n_steps(spec)
    data = np.zeros((total, len(columns)))
    row: list = []
    status = "completed"
    try:
        for k in range(total):
            try:
                step_simulation(world, row)
            except LinkClosed as exc:
                world._emit(world.t_ns / NS_PER_S, exc.source, "link_bye", str(exc))
                status = "incomplete"
                data = data[:k]
                break
            except LinkError as exc:
                world._emit(world.t_ns / NS_PER_S, exc.source, "link_fault", str(exc))
                status = "aborted"
                data = data[:k]
                break
            data[k] = row
            if progress is not None and k % 4000 == 0:
                progress(k, total)
    finally:
        for dep in world.deployments:
            if dep.hil is not None:
                dep.hil.close()
    trace = Trace(columns, csv_columns, ints, data)
    summary = summarize(spec, trace, world.events, world)
    summary["status"] = status
    return RunResult(trace, world.events, summary, status)


def summarize(spec: ScenarioSpec, trace: Trace, events: list[EventRecord], world: World | None = None) -> dict:
    """Per-line current statistics, device state totals and relay timeline."""
    n = len(trace)
    dt = spec.dt_s
    window = max(1, round(FINAL_WINDOW_S / dt))
    lines = {}
    overload = False
    for line_id in spec.monitored():
        limit_ka = next(ln.thermal_limit_a for ln in spec.network.lines if ln.id == line_id) / 1000.0
        mags = np.stack([trace.column(f"{line_id}.{ph}.i_mag_kA") for ph in PHASE_NAMES]) if n else np.zeros((3, 0))
        final = mags[:, -window:].mean(axis=1) if n else np.zeros(3)
        over = bool(n and final.max() > limit_ka)
        overload |= over
        states = {}
        if n:
            for ph in PHASE_NAMES:
                codes = trace.column(f"{line_id}.{ph}.device_state_code")
                values, counts = np.unique(codes.astype(int), return_counts=True)
                states[ph] = {_state_name(int(v)): round(int(c) * dt, 9) for v, c in zip(values, counts)}
        lines[line_id] = {
            "max_i_kA": float(mags.max()) if n else 0.0,
            "final_window_mean_i_kA": [float(x) for x in final],
            "final_window_max_phase_i_kA": float(final.max()) if n else 0.0,
            "thermal_limit_kA": limit_ka,
            "overload": over,
            "time_in_state_s": states,
        }
    relay_ids = {r.id for r in spec.relays}
    timeline = [
        {"t_s": e.t_s, "source": e.source, "name": e.name}
        for e in events
        if e.source in relay_ids or e.name.startswith("breaker_")
    ]
    return {
        "scenario": spec.name,
        "steps": n,
        "dt_s": dt,
        "t_end_s": spec.t_end_s,
        "lines": lines,
        "overload": overload,
        "kcl_residual_max": float(trace.column("kcl_residual").max()) if n else 0.0,
        "relay_timeline": timeline,
    }


def _state_name(code: int) -> str:
    return "Disabled" if code < 0 else ("Monitoring", "Injection", "LorBypass", "OcBypass")[code]
