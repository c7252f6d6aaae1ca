"""Distance relay: impedance loops, mho zones, trip and single-shot auto-reclose."""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from .device import ContractViolation, to_ns
from .network import ThreePhaseSet

LOOP_IDS = ("AB", "BC", "CA", "AG", "BG", "CG")
_PAIRS = ((0, 1), (1, 2), (2, 0))

_FWD_LO = math.radians(-30.0)
_FWD_HI = math.radians(150.0)


class Direction(str, enum.Enum):
    FORWARD = "forward"
    REVERSE = "reverse"
    NON_DIRECTIONAL = "non_directional"


class RecloseState(enum.IntEnum):
    IDLE = 0
    DEAD_TIME = 1
    RECLAIM = 2
    LOCKED_OUT = 3


@dataclass(frozen=True)
class Zone:
    reach_z: complex
    delay_s: float = 0.0
    direction: Direction = Direction.FORWARD


@dataclass(frozen=True)
class RelaySettings:
    id: str
    line_id: str
    terminal: str = "from"
    zones: tuple[Zone, ...] = ()
    k0: complex = 0j
    breaker_operate_delay_s: float = 0.040
    reclose_dead_time_s: float = 0.9
    reclaim_time_s: float = 5.0
    reclose_attempts: int = 1
    min_current_ka: float = 0.05

    def violations(self) -> list[str]:
        errors = []
        if self.terminal not in ("from", "to"):
            errors.append("terminal must be 'from' or 'to'")
        if not self.zones:
            errors.append("at least one zone is required")
        reaches = [abs(z.reach_z) for z in self.zones]
        if any(b <= a for a, b in zip(reaches, reaches[1:])):
            errors.append("zone reaches must be strictly increasing in magnitude")
        delays = [z.delay_s for z in self.zones]
        if any(b < a for a, b in zip(delays, delays[1:])) or any(d < 0 for d in delays):
            errors.append("zone delays must be non-negative and non-decreasing")
        if self.reclose_attempts < 0:
            errors.append("reclose_attempts must be >= 0")
        for name in ("breaker_operate_delay_s", "reclose_dead_time_s", "reclaim_time_s", "min_current_ka"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        return errors

    def signal_names(self) -> list[str]:
        names = [f"zone{k + 1}_pickup" for k in range(len(self.zones))]
        return names + ["trip", "pole_open_A", "pole_open_B", "pole_open_C", "pole_discrepancy"]


class LoopMeasurement(NamedTuple):
    loop: str
    z: complex
    valid: bool


@dataclass(frozen=True)
class RelayState:
    timer_start_ns: tuple[int | None, ...]
    pickups: tuple[bool, ...]
    trip_asserted: bool = False
    reclose_state: RecloseState = RecloseState.IDLE
    attempt_count: int = 0
    dead_start_ns: int | None = None
    reclaim_deadline_ns: int | None = None
    last_t_ns: int | None = None
    signals: dict[str, bool] = field(default_factory=dict, compare=False)

    @classmethod
    def initial(cls, settings: RelaySettings) -> RelayState:
        n = len(settings.zones)
        return cls(timer_start_ns=(None,) * n, pickups=(False,) * n)


def measure_loops(v: ThreePhaseSet, i: ThreePhaseSet, k0: complex = 0j, min_current_ka: float = 0.05) -> list[LoopMeasurement]:
    """Apparent impedance of the three phase-phase and three phase-ground loops."""
    out = []
    for x, y in _PAIRS:
        den = i[x] - i[y]
        if abs(den) < min_current_ka:
            out.append(LoopMeasurement(_loop_name(x, y), 0j, False))
        else:
            out.append(LoopMeasurement(_loop_name(x, y), (v[x] - v[y]) / den, True))
    residual = k0 * (i[0] + i[1] + i[2])
    for x in range(3):
        den = i[x] + residual
        name = LOOP_IDS[3 + x]
        if abs(den) < min_current_ka:
            out.append(LoopMeasurement(name, 0j, False))
        else:
            out.append(LoopMeasurement(name, v[x] / den, True))
    return out


def _loop_name(x: int, y: int) -> str:
    return "ABC"[x] + "ABC"[y]


def zone_check(m: LoopMeasurement, zone: Zone) -> bool:
    """Self-polarized mho membership; the origin counts as inside."""
    half = zone.reach_z / 2
    return abs(m.z - half) <= abs(half)


def _direction_of(z: complex) -> Direction:
    ang = cmath.phase(z)
    if _FWD_LO < ang <= _FWD_HI:
        return Direction.FORWARD
    return Direction.REVERSE


def directional(v: complex, i: complex, min_current_ka: float = 0.05) -> Direction | None:
    """Forward when the angle of V/I lies in (-30, 150] degrees; None below supervision."""
    if abs(i) < min_current_ka:
        return None
    return _direction_of(v / i)


def _loop_picks_up(m: LoopMeasurement, zone: Zone) -> bool:
    if not m.valid or not zone_check(m, zone):
        return False
    if zone.direction is Direction.NON_DIRECTIONAL:
        return True
    if m.z == 0:
        return True
    return _direction_of(m.z) is zone.direction


def zone_pickups(measurements: list[LoopMeasurement], settings: RelaySettings) -> tuple[bool, ...]:
    """Whether any loop lies inside each zone's characteristic."""
    valid = [m for m in measurements if m.valid]
    out = []
    for zone in settings.zones:
        half = zone.reach_z / 2
        radius = abs(half)
        pk = False
        for m in valid:
            if abs(m.z - half) <= radius and (
                zone.direction is Direction.NON_DIRECTIONAL or m.z == 0 or _direction_of(m.z) is zone.direction
            ):
                pk = True
                break
        out.append(pk)
    return tuple(out)


def step_relay(
    state: RelayState,
    measurements: list[LoopMeasurement],
    t_now: float,
    settings: RelaySettings,
    poles_closed: tuple[bool, bool, bool] = (True, True, True),
) -> tuple[RelayState, list[str], dict[str, bool], list[str]]:
    """One relay sample.

    Returns ``(state, commands, signals, events)`` where commands are
    ``"open"``/``"close"`` for the relay's own breaker.
    """
    t = to_ns(t_now)
    if state.last_t_ns is not None and t < state.last_t_ns:
        raise ContractViolation(f"time went backwards: {t} < {state.last_t_ns}")
    events: list[str] = []
    pickups = []
    timers = []
    zone_trip = False
    zone_pk = zone_pickups(measurements, settings)
    for k, zone in enumerate(settings.zones):
        pk = zone_pk[k]
        start = state.timer_start_ns[k]
        if pk:
            if start is None:
                start = t
            if t - start >= to_ns(zone.delay_s):
                zone_trip = True
        else:
            start = None
        if pk != state.pickups[k]:
            events.append(f"zone{k + 1}_{'pickup' if pk else 'dropout'}")
        pickups.append(pk)
        timers.append(start)

    commands: list[str] = []
    rs = state.reclose_state
    attempts = state.attempt_count
    dead_start = state.dead_start_ns
    reclaim = state.reclaim_deadline_ns
    trip = zone_trip

    if rs is RecloseState.IDLE:
        if trip:
            if attempts < settings.reclose_attempts:
                rs = RecloseState.DEAD_TIME
                dead_start = None
            else:
                rs = RecloseState.LOCKED_OUT
                events.append("lockout")
    elif rs is RecloseState.DEAD_TIME:
        if dead_start is None and not any(poles_closed):
            dead_start = t
        if dead_start is not None and t - dead_start >= to_ns(settings.reclose_dead_time_s):
            commands.append("close")
            attempts += 1
            rs = RecloseState.RECLAIM
            reclaim = t + to_ns(settings.reclaim_time_s)
            dead_start = None
            events.append("reclose")
    elif rs is RecloseState.RECLAIM:
        if trip or (pickups and pickups[0]):
            trip = True
            if attempts >= settings.reclose_attempts:
                rs = RecloseState.LOCKED_OUT
                events.append("lockout")
            else:
                rs = RecloseState.DEAD_TIME
                dead_start = None
        elif t >= reclaim:
            rs = RecloseState.IDLE
            attempts = 0
            reclaim = None

    if trip:
        commands.insert(0, "open")
        if not state.trip_asserted:
            events.append("trip")
    elif state.trip_asserted:
        events.append("trip_reset")

    signals = {f"zone{k + 1}_pickup": pk for k, pk in enumerate(pickups)}
    signals["trip"] = trip
    for p, closed in enumerate(poles_closed):
        signals[f"pole_open_{'ABC'[p]}"] = not closed
    signals["pole_discrepancy"] = any(poles_closed) and not all(poles_closed)

    new = RelayState(
        timer_start_ns=tuple(timers),
        pickups=tuple(pickups),
        trip_asserted=trip,
        reclose_state=rs,
        attempt_count=attempts,
        dead_start_ns=dead_start,
        reclaim_deadline_ns=reclaim,
        last_t_ns=t,
        signals=signals,
    )
    return new, commands, signals, events
