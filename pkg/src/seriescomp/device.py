"""Single-phase series compensator: injection law, capability and bypass logic."""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

NS_PER_S = 1_000_000_000


class ContractViolation(RuntimeError):
    pass


class Mode(enum.IntEnum):
    MONITORING = 0
    INJECTION = 1
    LOR_BYPASS = 2
    OC_BYPASS = 3


class CommandMode(str, enum.Enum):
    FIXED_REACTANCE = "fixed_reactance"
    FIXED_VOLTAGE = "fixed_voltage"
    OFF = "off"


class Polarity(str, enum.Enum):
    INDUCTIVE = "inductive"
    CAPACITIVE = "capacitive"


@dataclass(frozen=True)
class DeviceRating:
    n_converters: int = 10
    s_per_converter_mvar: float = 1.0
    rated_current_ka: float = 1.0
    i_min_inject_ka: float = 0.05

    def __post_init__(self):
        for name in ("n_converters", "s_per_converter_mvar", "rated_current_ka", "i_min_inject_ka"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive")

    @property
    def s_total_mvar(self) -> float:
        return self.n_converters * self.s_per_converter_mvar

    @property
    def v_cap_kv(self) -> float:
        return self.s_total_mvar / self.rated_current_ka


@dataclass(frozen=True)
class InjectionCommand:
    mode: CommandMode = CommandMode.FIXED_REACTANCE
    x_set_ohm: float = 0.0
    v_set_kv: float = 0.0
    polarity: Polarity = Polarity.INDUCTIVE

    def __post_init__(self):
        if not math.isfinite(self.x_set_ohm):
            raise ValueError("x_set_ohm must be finite")
        if not (math.isfinite(self.v_set_kv) and self.v_set_kv >= 0):
            raise ValueError("v_set_kv must be finite and >= 0")


@dataclass(frozen=True)
class DeviceProtectionSettings:
    i_oc_ka: float = 3.8
    i_lor_ka: float = 1.1414
    t_bypass_ms: float = 1.0
    t_oc_lockout_s: float = 30.0
    t_lor_hold_s: float = 1.0
    lor_enabled: bool = True
    oc_enabled: bool = True
    t_low_current_s: float = 0.05

    def violations(self) -> list[str]:
        errors = []
        if not 0 < self.i_lor_ka < self.i_oc_ka:
            errors.append("i_lor_ka must satisfy 0 < i_lor_ka < i_oc_ka")
        if not 0 < self.t_bypass_ms <= 1.0:
            errors.append("t_bypass_ms must lie in (0, 1]")
        if self.t_oc_lockout_s < 30.0:
            errors.append("t_oc_lockout_s must be >= 30")
        if not self.t_lor_hold_s > 0:
            errors.append("t_lor_hold_s must be > 0")
        if self.t_low_current_s < 0:
            errors.append("t_low_current_s must be >= 0")
        return errors


@dataclass(frozen=True)
class AngleTrackerSettings:
    tau_s: float = 0.005

    def __post_init__(self):
        if not self.tau_s > 0:
            raise ValueError("tau_s must be > 0")


class DeviceState(NamedTuple):
    phase: int
    mode: Mode = Mode.MONITORING
    vsl_closed: bool = True
    lockout_deadline_ns: int | None = None
    lor_hold_deadline_ns: int | None = None
    lor_from_ipb: bool = False
    low_current_since_ns: int | None = None
    angle_tracker_rad: float | None = None
    last_injection: complex = 0j
    last_t_ns: int | None = None
    lor_trigger_active: bool = False


def to_ns(t_s: float) -> int:
    return round(t_s * NS_PER_S)


def wrap_angle(x: float) -> float:
    """Wrap to (-pi, pi]."""
    y = math.remainder(x, 2.0 * math.pi)
    return math.pi if y == -math.pi else y


def update_angle_tracker(
    state: DeviceState,
    i_line: complex,
    dt: float,
    settings: AngleTrackerSettings,
    i_min_ka: float = 0.0,
) -> DeviceState:
    """First-order lag of the tracked current angle.

    The tracker holds while the current is below ``i_min_ka`` and locks
    directly onto the measured angle the first time current is available.
    """
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    if abs(i_line) < i_min_ka or i_line == 0:
        return state
    theta = cmath.phase(i_line)
    if state.angle_tracker_rad is None:
        return state._replace(angle_tracker_rad=theta)
    err = wrap_angle(theta - state.angle_tracker_rad)
    if err == 0.0:
        return state
    new = wrap_angle(state.angle_tracker_rad + (dt / settings.tau_s) * err)
    if new == state.angle_tracker_rad:
        return state
    return state._replace(angle_tracker_rad=new)


def capability_limit(rating: DeviceRating, i_mag: float) -> float:
    """Largest injectable voltage magnitude (kV) at line current ``i_mag`` (kA)."""
    if i_mag < rating.i_min_inject_ka:
        return 0.0
    if i_mag <= rating.rated_current_ka:
        return rating.v_cap_kv
    return rating.s_total_mvar / i_mag


def compute_injection(cmd: InjectionCommand, i_line: complex, state: DeviceState, rating: DeviceRating) -> complex:
    """Series voltage drop (kV) for an injecting device."""
    if state.mode is not Mode.INJECTION:
        raise ContractViolation(f"compute_injection called in {state.mode.name}")
    if cmd.mode is CommandMode.OFF:
        return 0j
    if cmd.mode is CommandMode.FIXED_REACTANCE:
        v = complex(-cmd.x_set_ohm * i_line.imag, cmd.x_set_ohm * i_line.real)
    else:
        if state.angle_tracker_rad is None:
            return 0j
        quarter = math.pi / 2 if cmd.polarity is Polarity.INDUCTIVE else -math.pi / 2
        v = cmath.rect(cmd.v_set_kv, state.angle_tracker_rad + quarter)
    limit = capability_limit(rating, abs(i_line))
    mag = abs(v)
    if mag > limit:
        v = v * (limit / mag) if limit > 0 else 0j
    return v


def step_protection(
    state: DeviceState,
    i_mag: float,
    backup_lor: bool,
    ipb_cmd: bool,
    t_now: float,
    settings: DeviceProtectionSettings,
    rating: DeviceRating,
) -> tuple[DeviceState, list[str]]:
    """Advance the bypass state machine by one sample.

    Returns the new state and the names of the transitions that happened.
    Deadlines are kept in integer nanoseconds so timing is exact in steps.
    """
    t = to_ns(t_now)
    if state.last_t_ns is not None and t < state.last_t_ns:
        raise ContractViolation(f"time went backwards: {t} < {state.last_t_ns}")
    events: list[str] = []
    mode = state.mode
    lockout = state.lockout_deadline_ns
    hold = state.lor_hold_deadline_ns
    from_ipb = state.lor_from_ipb
    low_since = state.low_current_since_ns

    oc_trip = settings.oc_enabled and i_mag > settings.i_oc_ka
    own_lor = settings.lor_enabled and ((i_mag > settings.i_lor_ka and not oc_trip) or backup_lor)
    trigger = own_lor or ipb_cmd
    hold_ns = to_ns(settings.t_lor_hold_s)

    if mode is not Mode.OC_BYPASS and oc_trip:
        if mode is Mode.LOR_BYPASS:
            events.append("lor_exit")
        mode = Mode.OC_BYPASS
        lockout = t + to_ns(settings.t_oc_lockout_s)
        hold = None
        from_ipb = False
        low_since = None
        events.append("oc_bypass_enter")
    elif mode is Mode.OC_BYPASS:
        if i_mag > settings.i_lor_ka:
            lockout = t + to_ns(settings.t_oc_lockout_s)
        elif t >= lockout:
            mode = Mode.INJECTION
            lockout = None
            events.append("oc_bypass_exit")
    elif mode is Mode.LOR_BYPASS:
        if own_lor:
            hold = t + hold_ns
            from_ipb = False
        elif ipb_cmd:
            pass
        elif t >= hold:
            mode = Mode.INJECTION
            hold = None
            from_ipb = False
            events.append("lor_exit")
    elif trigger:
        # Injection or Monitoring with a ride-through trigger
        mode = Mode.LOR_BYPASS
        hold = t + hold_ns
        from_ipb = not own_lor
        low_since = None
        events.append("lor_enter")
    elif mode is Mode.INJECTION:
        if i_mag < rating.i_min_inject_ka:
            if low_since is None:
                low_since = t
            if t - low_since >= to_ns(settings.t_low_current_s):
                mode = Mode.MONITORING
                low_since = None
                events.append("monitoring_enter")
        else:
            low_since = None
    elif mode is Mode.MONITORING:
        if i_mag >= rating.i_min_inject_ka:
            mode = Mode.INJECTION
            events.append("injection_enter")

    if mode is Mode.LOR_BYPASS and own_lor and not state.lor_trigger_active:
        events.append("lor_trigger")

    new = DeviceState(
        state.phase,
        mode,
        mode is not Mode.INJECTION and mode is not Mode.LOR_BYPASS,
        lockout,
        hold,
        from_ipb,
        low_since,
        state.angle_tracker_rad,
        state.last_injection if mode is Mode.INJECTION else 0j,
        t,
        own_lor and mode is Mode.LOR_BYPASS,
    )
    return new, events


def step_device(
    state: DeviceState,
    cmd: InjectionCommand,
    i_line: complex,
    backup_lor: bool,
    ipb_cmd: bool,
    t_now: float,
    dt: float,
    rating: DeviceRating,
    settings: DeviceProtectionSettings,
    tracker: AngleTrackerSettings,
) -> tuple[DeviceState, complex, list[str]]:
    """Tracker update, protection step and new injection for one sample."""
    state = update_angle_tracker(state, i_line, dt, tracker, rating.i_min_inject_ka)
    state, events = step_protection(state, abs(i_line), backup_lor, ipb_cmd, t_now, settings, rating)
    if state.mode is Mode.INJECTION:
        v = compute_injection(cmd, i_line, state, rating)
    else:
        v = 0j
    if v != state.last_injection:
        state = state._replace(last_injection=v)
    return state, v, events
