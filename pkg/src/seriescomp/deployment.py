"""Per-line three-phase deployments of series devices."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol

from .device import (
    AngleTrackerSettings,
    DeviceProtectionSettings,
    DeviceRating,
    DeviceState,
    InjectionCommand,
    Mode,
    compute_injection,
    step_device,
)

PHASE_NAMES = ("A", "B", "C")

# phase-level transition -> event name
_ENTER_EVENTS = {
    Mode.OC_BYPASS: "oc_bypass_enter",
    Mode.LOR_BYPASS: "lor_enter",
    Mode.MONITORING: "monitoring_enter",
}
_EXIT_TO_INJECTION = {
    Mode.OC_BYPASS: "oc_bypass_exit",
    Mode.LOR_BYPASS: "lor_exit",
    Mode.MONITORING: "injection_enter",
}


@dataclass(frozen=True)
class DeploymentConfig:
    line_id: str
    devices_per_phase: int = 1
    scale_factor: float = 1.0
    ipb_enabled: bool = True
    backup_lor_enabled: bool = True
    command: InjectionCommand = field(default_factory=InjectionCommand)
    rating: DeviceRating = field(default_factory=DeviceRating)
    protection: DeviceProtectionSettings = field(default_factory=DeviceProtectionSettings)
    tracker: AngleTrackerSettings = field(default_factory=AngleTrackerSettings)
    # (relay id, signal name); None selects the default wiring
    backup_lor_signals: tuple[tuple[str, str], ...] | None = None
    hil: bool = False
    id: str = ""

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", self.line_id)
        # canonical float so documents round-trip to the same text
        if isinstance(self.scale_factor, int) and not isinstance(self.scale_factor, bool):
            object.__setattr__(self, "scale_factor", float(self.scale_factor))

    @property
    def physical_per_phase(self) -> float:
        return self.devices_per_phase * self.scale_factor

    def violations(self) -> list[str]:
        errors = []
        if self.devices_per_phase < 1:
            errors.append("devices_per_phase: must be >= 1")
        if not (math.isfinite(self.scale_factor) and self.scale_factor >= 1):
            errors.append("scale_factor: must be >= 1")
        errors.extend(f"protection: {e}" for e in self.protection.violations())
        return errors


@dataclass
class DeploymentState:
    devices: tuple[tuple[DeviceState, ...], tuple[DeviceState, ...], tuple[DeviceState, ...]]
    ipb_commands: tuple[bool, bool, bool] = (False, False, False)
    backup_lor_active: bool = False

    @classmethod
    def initial(cls, cfg: DeploymentConfig) -> DeploymentState:
        return cls(tuple((DeviceState(phase=p),) * cfg.devices_per_phase for p in range(3)))


@dataclass(frozen=True)
class FeatureFlags:
    devices_enabled: bool = True
    oc_enabled: bool = True
    lor_enabled: bool = True
    ipb_enabled: bool = True
    backup_lor_enabled: bool = True


def sum_injections(scale: float, values: Iterable[complex]) -> complex:
    """``scale`` times the correctly rounded sum of ``values``.

    ``fsum`` makes n equal values at scale 1 and one value at scale n
    produce the same bits.
    """
    values = list(values)
    first = values[0] if values else 0j
    if all(v == first for v in values):
        # n equal terms: one correctly rounded product equals the correctly rounded sum
        n = len(values)
        total = complex(first.real * n, first.imag * n) if n > 1 else first
    else:
        total = complex(math.fsum(v.real for v in values), math.fsum(v.imag for v in values))
    return total if scale == 1 else complex(total.real * scale, total.imag * scale)


def aggregate_injection(
    cfg: DeploymentConfig, states: DeploymentState, currents: tuple[complex, complex, complex]
) -> tuple[complex, complex, complex]:
    """Total series voltage per phase; bypassed or monitoring devices add nothing."""
    out = []
    for p in range(3):
        vals = [
            compute_injection(cfg.command, currents[p], s, cfg.rating) if s.mode is Mode.INJECTION else 0j
            for s in states.devices[p]
        ]
        out.append(sum_injections(cfg.scale_factor, vals))
    return tuple(out)


def phase_triggering(devices: Iterable[DeviceState]) -> bool:
    """A phase bypassed by its own protection, not by an interphase command."""
    return any(
        d.mode is Mode.OC_BYPASS or (d.mode is Mode.LOR_BYPASS and not d.lor_from_ipb) for d in devices
    )


def ipb_coordinate(states: DeploymentState) -> tuple[bool, bool, bool]:
    """Bypass commands for healthy phases while another phase is bypassed."""
    trig = [phase_triggering(states.devices[p]) for p in range(3)]
    return tuple(not trig[p] and any(trig[q] for q in range(3) if q != p) for p in range(3))


def default_backup_signals(relays: Iterable[tuple[str, int]]) -> tuple[tuple[str, str], ...]:
    """Default backup-LOR wiring for the relays protecting a line.

    ``relays`` yields ``(relay_id, n_zones)``.  Any zone pickup, a trip or
    a pole discrepancy on any of them asserts the command.
    """
    out = []
    for relay_id, n_zones in relays:
        out.extend((relay_id, f"zone{z + 1}_pickup") for z in range(n_zones))
        out.append((relay_id, "trip"))
        out.append((relay_id, "pole_discrepancy"))
    return tuple(out)


def backup_lor_evaluate(relay_signals, wiring: Iterable[tuple[str, str]]) -> bool:
    """OR of the wired relay signals.

    ``relay_signals`` maps relay id to that relay's published signal dict,
    or is a set of asserted ``(relay_id, name)`` pairs.
    """
    if isinstance(relay_signals, (set, frozenset)):
        return any(pair in relay_signals for pair in wiring)
    return any(relay_signals.get(rid, {}).get(name, False) for rid, name in wiring)


def phase_code(devices: Iterable[DeviceState]) -> int:
    return max(int(d.mode) for d in devices)


class HilController(Protocol):
    """Out-of-process stand-in for the first device of every phase."""

    def exchange(
        self,
        t_now: float,
        currents: tuple[complex, complex, complex],
        backup_lor: bool,
        ipb: tuple[bool, bool, bool],
        cmd: InjectionCommand,
        protection: DeviceProtectionSettings,
        states: tuple[DeviceState, DeviceState, DeviceState],
    ) -> tuple[DeviceState, DeviceState, DeviceState]:
        ...


class Deployment:
    """Runtime wrapper stepping all devices of one deployment.

    Interphase and backup commands computed at one step act at the next.
    """

    def __init__(self, cfg: DeploymentConfig, wiring: tuple[tuple[str, str], ...] = (), hil: HilController | None = None):
        self.cfg = cfg
        self.command = cfg.command
        self.wiring = wiring
        self.hil = hil
        self.state = DeploymentState.initial(cfg)
        self.injections: tuple[complex, complex, complex] = (0j, 0j, 0j)
        self._protection_key = None
        self._codes = (None, (-1, -1, -1))
        self._protection_cache = cfg.protection

    def phase_codes(self, flags: FeatureFlags) -> tuple[int, int, int]:
        if not flags.devices_enabled:
            return (-1, -1, -1)
        if self._codes[0] is not self.state:
            self._codes = (self.state, tuple(phase_code(self.state.devices[p]) for p in range(3)))
        return self._codes[1]

    def step(
        self,
        currents: tuple[complex, complex, complex],
        relay_signals: dict[str, dict[str, bool]],
        t_now: float,
        dt: float,
        flags: FeatureFlags,
    ) -> tuple[tuple[complex, complex, complex], list[tuple[str, str, str]]]:
        """Returns per-phase injections and ``(source, name, detail)`` events."""
        cfg = self.cfg
        if not flags.devices_enabled:
            self.injections = (0j, 0j, 0j)
            return self.injections, []
        protection = self._protection(flags)
        ipb_on = cfg.ipb_enabled and flags.ipb_enabled
        backup_on = cfg.backup_lor_enabled and flags.backup_lor_enabled
        old = self.state
        ipb = old.ipb_commands if ipb_on else (False, False, False)
        backup = old.backup_lor_active and backup_on

        new_devices = []
        injections = []
        first = None
        if self.hil is not None:
            first = self.hil.exchange(
                t_now, currents, backup, ipb, self.command, protection, tuple(old.devices[p][0] for p in range(3))
            )
        for p in range(3):
            phase_states = []
            values = []
            # devices in identical states see identical inputs, so one step serves them all
            seen_in = seen_out = None
            for k, dev in enumerate(old.devices[p]):
                if first is not None and k == 0:
                    dev = first[p]
                    v = dev.last_injection
                elif dev is seen_in:
                    dev, v = seen_out
                else:
                    seen_in = dev
                    dev, v, _ = step_device(
                        dev, self.command, currents[p], backup, ipb[p], t_now, dt,
                        cfg.rating, protection, cfg.tracker,
                    )
                    seen_out = (dev, v)
                phase_states.append(dev)
                values.append(v)
            new_devices.append(tuple(phase_states))
            injections.append(sum_injections(cfg.scale_factor, values))
        state = DeploymentState(devices=tuple(new_devices))
        next_ipb = ipb_coordinate(state) if ipb_on else (False, False, False)
        next_backup = backup_on and backup_lor_evaluate(relay_signals, self.wiring)
        state.ipb_commands = next_ipb
        state.backup_lor_active = next_backup
        self.state = state
        self.injections = tuple(injections)
        return self.injections, self._events(old, self.state, currents)

    def _protection(self, flags: FeatureFlags) -> DeviceProtectionSettings:
        key = (flags.oc_enabled, flags.lor_enabled)
        if self._protection_key != key:
            base = self.cfg.protection
            self._protection_cache = replace(
                base, oc_enabled=base.oc_enabled and key[0], lor_enabled=base.lor_enabled and key[1]
            )
            self._protection_key = key
        return self._protection_cache

    def _events(self, old: DeploymentState, new: DeploymentState, currents) -> list[tuple[str, str, str]]:
        events = []
        for p in range(3):
            if all(
                a.mode is b.mode and a.lor_trigger_active == b.lor_trigger_active
                for a, b in zip(old.devices[p], new.devices[p])
            ):
                continue
            src = f"{self.cfg.id}:{PHASE_NAMES[p]}"
            before = Mode(phase_code(old.devices[p]))
            after = Mode(phase_code(new.devices[p]))
            detail = f"i_mag_kA={abs(currents[p]):.6f}"
            if after != before:
                if after is Mode.INJECTION:
                    events.append((src, _EXIT_TO_INJECTION[before], detail))
                else:
                    if before is Mode.LOR_BYPASS:
                        events.append((src, "lor_exit", detail))
                    events.append((src, _ENTER_EVENTS[after], detail))
            was = any(d.lor_trigger_active for d in old.devices[p])
            now = any(d.lor_trigger_active for d in new.devices[p])
            if now and not was:
                events.append((src, "lor_trigger", detail))
        if new.backup_lor_active != old.backup_lor_active:
            name = "backup_lor_assert" if new.backup_lor_active else "backup_lor_release"
            events.append((self.cfg.id, name, ""))
        for p in range(3):
            if new.ipb_commands[p] != old.ipb_commands[p]:
                name = "ipb_command" if new.ipb_commands[p] else "ipb_release"
                events.append((f"{self.cfg.id}:{PHASE_NAMES[p]}", name, ""))
        return events
