"""Scenario files (YAML) and run artifacts (CSV, JSON Lines, JSON, SVG).

The scenario document mirrors the dataclasses field by field.  Unknown
keys are errors, every semantic problem is reported with a path into the
document, and ``dump_scenario`` writes a canonical form that loads back
to an equal spec.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
import os
import types
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .deployment import FeatureFlags
from .device import InjectionCommand
from .network import NetworkError, NetworkModel, ThreePhaseSet
from .scenario import EventKind, EventRecord, FaultSpec, RunResult, ScenarioError, ScenarioEvent, ScenarioSpec, Trace

FORMAT_VERSION = 1
PHASES = "ABC"


class ScenarioParseError(ValueError):
    """Malformed YAML; carries 1-based ``line`` and ``column`` when known."""

    def __init__(self, message: str, source: str = "<string>", line: int | None = None, column: int | None = None):
        where = source if line is None else f"{source}:{line}:{column}"
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line
        self.column = column


# ---------------------------------------------------------------- scalars


def format_complex(z: complex) -> str:
    """Exact text form accepted by ``complex()``, e.g. ``2.0+30.0j``."""
    im = repr(float(z.imag))
    if im[0] not in "+-":
        im = "+" + im
    return f"{float(z.real)!r}{im}j"


def _parse_complex(value, path, errors):
    if isinstance(value, bool):
        errors.append(f"{path}: expected a complex number, got {value!r}")
        return None
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, str):
        try:
            return complex(value.replace(" ", ""))
        except ValueError:
            pass
    if isinstance(value, (list, tuple)) and len(value) == 2 and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        return complex(value[0], value[1])
    errors.append(f"{path}: expected a complex number like '2+30j', got {value!r}")
    return None


def _parse_float(value, path, errors):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        # YAML 1.1 reads 1e-5 (no dot) as a string
        try:
            return float(value)
        except ValueError:
            pass
    errors.append(f"{path}: expected a number, got {value!r}")
    return None


def _parse_three_phase(value, path, errors):
    if isinstance(value, dict):
        extra = set(value) - {"magnitude_kv", "angle_deg"}
        for key in sorted(extra):
            errors.append(f"{path}.{key}: unknown key")
        if "magnitude_kv" not in value:
            errors.append(f"{path}.magnitude_kv: required")
            return None
        mag = _parse_float(value["magnitude_kv"], f"{path}.magnitude_kv", errors)
        ang = _parse_float(value.get("angle_deg", 0.0), f"{path}.angle_deg", errors)
        if mag is None or ang is None:
            return None
        return ThreePhaseSet.balanced(mag, math.radians(ang))
    if isinstance(value, list) and len(value) == 3:
        parts = [_parse_complex(v, f"{path}[{k}]", errors) for k, v in enumerate(value)]
        return None if None in parts else ThreePhaseSet(*parts)
    errors.append(f"{path}: expected three phasors or {{magnitude_kv, angle_deg}}")
    return None


# ---------------------------------------------------------------- generic conversion


def _hints(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _from_doc(tp, value, path: str, errors: list[str]):
    """Convert a YAML value to ``tp``; problems go to ``errors`` and yield None."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _from_doc(inner[0], value, path, errors)
    if tp is ThreePhaseSet:
        return _parse_three_phase(value, path, errors)
    if tp is complex:
        return _parse_complex(value, path, errors)
    if tp is float:
        return _parse_float(value, path, errors)
    if tp is bool:
        if isinstance(value, bool):
            return value
        errors.append(f"{path}: expected true/false, got {value!r}")
        return None
    if tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        errors.append(f"{path}: expected an integer, got {value!r}")
        return None
    if tp is str:
        if isinstance(value, str):
            return value
        errors.append(f"{path}: expected a string, got {value!r}")
        return None
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            allowed = ", ".join(str(m.value) for m in tp)
            errors.append(f"{path}: {value!r} is not one of {allowed}")
            return None
    if origin is tuple:
        if not isinstance(value, list):
            errors.append(f"{path}: expected a list")
            return None
        if len(args) == 2 and args[1] is Ellipsis:
            items = [_from_doc(args[0], v, f"{path}[{k}]", errors) for k, v in enumerate(value)]
        else:
            if len(value) != len(args):
                errors.append(f"{path}: expected {len(args)} items, got {len(value)}")
                return None
            items = [_from_doc(a, v, f"{path}[{k}]", errors) for k, (a, v) in enumerate(zip(args, value))]
        return None if any(x is None for x in items) else tuple(items)
    if dataclasses.is_dataclass(tp):
        return _dataclass_from_doc(tp, value, path, errors)
    raise TypeError(f"no converter for {tp!r}")


def _dataclass_from_doc(cls, value, path: str, errors: list[str], skip: tuple[str, ...] = ()):
    if not isinstance(value, dict):
        errors.append(f"{path}: expected a mapping")
        return None
    hints = _hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    for key in value:
        if key not in fields:
            # reported, but the rest of the object is still built so later checks run
            errors.append(f"{_join(path, key)}: unknown key")
    kwargs = {}
    ok = True
    for name, f in fields.items():
        if name not in value:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                errors.append(f"{_join(path, name)}: required")
                ok = False
            continue
        converted = _from_doc(hints[name], value[name], _join(path, name), errors)
        if converted is None and value[name] is not None:
            ok = False
        kwargs[name] = converted
    if not ok:
        return None
    try:
        return cls(**kwargs)
    except NetworkError as exc:
        errors.extend(f"{path}: {v}" if path else v for v in exc.violations)
    except (ValueError, TypeError) as exc:
        errors.append(f"{path}: {exc}" if path else str(exc))
    return None


def _join(path: str, key) -> str:
    return f"{path}.{key}" if path else str(key)


def to_doc(obj):
    """Plain YAML-ready data for any dataclass tree used in a scenario."""
    if isinstance(obj, ThreePhaseSet):
        return [format_complex(x) for x in obj]
    if dataclasses.is_dataclass(obj):
        return {f.name: to_doc(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, complex):
        return format_complex(obj)
    if isinstance(obj, (tuple, list)):
        return [to_doc(x) for x in obj]
    if isinstance(obj, dict):
        return {k: to_doc(v) for k, v in obj.items()}
    return obj


# ---------------------------------------------------------------- events


_EVENT_KEYS = {
    EventKind.APPLY_FAULT: ("fault",),
    EventKind.CLEAR_FAULT: ("line_id",),
    EventKind.OPEN_BREAKER: ("breaker", "phases"),
    EventKind.CLOSE_BREAKER: ("breaker", "phases"),
    EventKind.SET_INJECTION_COMMAND: ("deployment", "command"),
    EventKind.SET_FEATURE_FLAGS: ("flags",),
}


def _phase_list(value, path, errors):
    if not isinstance(value, str) or not value or any(c not in PHASES for c in value.upper()) or len(set(value.upper())) != len(value):
        errors.append(f"{path}: expected distinct phase letters from 'ABC', got {value!r}")
        return None
    return tuple(sorted(PHASES.index(c) for c in value.upper()))


def _event_from_doc(value, path, errors):
    if not isinstance(value, dict):
        errors.append(f"{path}: expected a mapping")
        return None
    kind = _from_doc(EventKind, value.get("kind"), f"{path}.kind", errors)
    t_s = _from_doc(float, value["t_s"], f"{path}.t_s", errors) if "t_s" in value else None
    if "t_s" not in value:
        errors.append(f"{path}.t_s: required")
    if kind is None:
        return None
    allowed = {"t_s", "kind", *_EVENT_KEYS[kind]}
    for key in value:
        if key not in allowed:
            errors.append(f"{path}.{key}: unknown key for {kind.value}")
    n_before = len(errors)
    payload = None
    if kind is EventKind.APPLY_FAULT:
        payload = _from_doc(FaultSpec, value.get("fault"), f"{path}.fault", errors)
    elif kind is EventKind.CLEAR_FAULT:
        payload = _from_doc(str, value.get("line_id"), f"{path}.line_id", errors)
    elif kind in (EventKind.OPEN_BREAKER, EventKind.CLOSE_BREAKER):
        breaker = _from_doc(str, value.get("breaker"), f"{path}.breaker", errors)
        phases = _phase_list(value.get("phases", "ABC"), f"{path}.phases", errors)
        payload = (breaker, phases)
    elif kind is EventKind.SET_INJECTION_COMMAND:
        dep = _from_doc(str, value.get("deployment"), f"{path}.deployment", errors)
        cmd = _from_doc(InjectionCommand, value.get("command"), f"{path}.command", errors)
        payload = (dep, cmd)
    elif kind is EventKind.SET_FEATURE_FLAGS:
        flags = value.get("flags")
        names = {f.name for f in dataclasses.fields(FeatureFlags)}
        if not isinstance(flags, dict) or not flags:
            errors.append(f"{path}.flags: expected a non-empty mapping")
        else:
            for key, v in flags.items():
                if key not in names:
                    errors.append(f"{path}.flags.{key}: unknown feature flag")
                elif not isinstance(v, bool):
                    errors.append(f"{path}.flags.{key}: expected true/false")
            payload = dict(sorted(flags.items()))
    if len(errors) > n_before or t_s is None:
        return None
    return ScenarioEvent(t_s, kind, payload)


def _event_to_doc(ev: ScenarioEvent) -> dict:
    doc = {"t_s": ev.t_s, "kind": ev.kind.value}
    if ev.kind is EventKind.APPLY_FAULT:
        doc["fault"] = to_doc(ev.payload)
    elif ev.kind is EventKind.CLEAR_FAULT:
        doc["line_id"] = ev.payload
    elif ev.kind in (EventKind.OPEN_BREAKER, EventKind.CLOSE_BREAKER):
        doc["breaker"] = ev.payload[0]
        doc["phases"] = "".join(PHASES[p] for p in ev.payload[1])
    elif ev.kind is EventKind.SET_INJECTION_COMMAND:
        doc["deployment"] = ev.payload[0]
        doc["command"] = to_doc(ev.payload[1])
    elif ev.kind is EventKind.SET_FEATURE_FLAGS:
        doc["flags"] = dict(ev.payload)
    return doc


# ---------------------------------------------------------------- documents

_TOP_KEYS = ("format", "name", "dt_s", "t_end_s", "feature_flags", "monitored_lines", "network", "deployments", "relays", "events")


def spec_to_doc(spec: ScenarioSpec) -> dict:
    return {
        "format": FORMAT_VERSION,
        "name": spec.name,
        "dt_s": spec.dt_s,
        "t_end_s": spec.t_end_s,
        "feature_flags": to_doc(spec.feature_flags),
        "monitored_lines": None if spec.monitored_lines is None else list(spec.monitored_lines),
        "network": to_doc(spec.network),
        "deployments": to_doc(spec.deployments),
        "relays": to_doc(spec.relays),
        "events": [_event_to_doc(ev) for ev in spec.events],
    }


def _unchecked_network(doc, errors: list[str]) -> NetworkModel | None:
    """Build the network even when it is invalid, so later checks can still run."""
    n_before = len(errors)
    model = _from_doc(NetworkModel, doc, "network", errors)
    if model is not None or len(errors) == n_before or not isinstance(doc, dict):
        return model
    # construct without validation; only structural errors prevent this
    probe: list[str] = []
    parts = {}
    hints = _hints(NetworkModel)
    for f in dataclasses.fields(NetworkModel):
        if f.name in doc:
            parts[f.name] = _from_doc(hints[f.name], doc[f.name], f"network.{f.name}", probe)
    if any(v is None for v in parts.values()) or "buses" not in parts or "lines" not in parts:
        return None
    model = object.__new__(NetworkModel)
    defaults = {"sources": (), "loads": (), "system_frequency": 60.0}
    for f in dataclasses.fields(NetworkModel):
        object.__setattr__(model, f.name, parts.get(f.name, defaults.get(f.name)))
    return model


def spec_from_doc(doc, source: str = "<string>") -> ScenarioSpec:
    """Validate a parsed document; raises ScenarioError listing every problem."""
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise ScenarioError([f"{source}: top level must be a mapping"])
    for key in doc:
        if key not in _TOP_KEYS:
            errors.append(f"{key}: unknown key")
    if doc.get("format", FORMAT_VERSION) != FORMAT_VERSION:
        errors.append(f"format: unsupported version {doc.get('format')!r}")
    if "network" not in doc:
        errors.append("network: required")
    network = _unchecked_network(doc.get("network"), errors) if "network" in doc else None

    kw: dict[str, Any] = {}
    hints = _hints(ScenarioSpec)
    for name in ("name", "dt_s", "t_end_s", "feature_flags", "monitored_lines", "deployments", "relays"):
        if name in doc:
            kw[name] = _from_doc(hints[name], doc[name], name, errors)
    events = []
    raw_events = doc.get("events", [])
    if not isinstance(raw_events, list):
        errors.append("events: expected a list")
    else:
        events = [_event_from_doc(ev, f"events[{k}]", errors) for k, ev in enumerate(raw_events)]
    if network is None or errors:
        # report structural errors plus whatever semantic checks are still possible
        if network is not None:
            # parts that failed to convert fall back to defaults for this pass
            partial = ScenarioSpec(
                network=network,
                events=tuple(ev for ev in events if ev is not None),
                **{k: v for k, v in kw.items() if v is not None},
            )
            errors.extend(e for e in partial.violations() if e not in errors)
        raise ScenarioError(errors)
    spec = ScenarioSpec(network=network, events=tuple(events), **{k: v for k, v in kw.items()})
    problems = spec.violations()
    if problems:
        raise ScenarioError(problems)
    return spec


def loads_scenario(text: str, source: str = "<string>") -> ScenarioSpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        if mark is not None:
            raise ScenarioParseError(problem, source, mark.line + 1, mark.column + 1) from None
        raise ScenarioParseError(problem, source) from None
    return spec_from_doc(doc, source)


def load_scenario(path: str | os.PathLike) -> ScenarioSpec:
    path = Path(path)
    return loads_scenario(path.read_text(encoding="utf-8"), str(path))


def dump_scenario(spec: ScenarioSpec) -> str:
    return yaml.safe_dump(spec_to_doc(spec), sort_keys=False, default_flow_style=False, allow_unicode=True)


def save_scenario(spec: ScenarioSpec, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.write_text(dump_scenario(spec), encoding="utf-8")
    return path


def fingerprint(text: str | bytes) -> str:
    data = text.encode("utf-8") if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------- run artifacts


@dataclass(frozen=True)
class RunArtifacts:
    trace: Path
    events: Path
    summary: Path
    plots: tuple[Path, ...]
    fingerprint: str


def format_trace_csv(trace: Trace) -> str:
    """Header plus one line per step; floats in shortest round-trip form."""
    header = ",".join(trace.csv_columns)
    if len(trace) == 0:
        return header + "\n"
    cols = []
    for name in trace.csv_columns:
        col = trace.column(name)
        if name in trace.int_columns:
            col = col.astype(np.int64)
        # numpy's float to str is the shortest round-trip form, same as repr
        cols.append(col.astype(str).tolist())
    return header + "\n" + "\n".join(map(",".join, zip(*cols))) + "\n"


def format_events_jsonl(events: list[EventRecord]) -> str:
    return "".join(
        json.dumps({"t_s": e.t_s, "source": e.source, "name": e.name, "detail": e.detail}) + "\n" for e in events
    )


def write_outputs(
    result: RunResult,
    out_dir: str | os.PathLike,
    spec_fingerprint: str,
    spec: ScenarioSpec | None = None,
    plots: bool = False,
) -> RunArtifacts:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        trace_path = out / "trace.csv"
        events_path = out / "events.jsonl"
        summary_path = out / "summary.json"
        trace_path.write_text(format_trace_csv(result.trace), encoding="utf-8")
        events_path.write_text(format_events_jsonl(result.events), encoding="utf-8")
        summary = dict(result.summary, fingerprint=spec_fingerprint, status=result.status)
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        plot_paths = write_plots(result.trace, out, spec) if plots else ()
    except OSError as exc:
        raise OSError(f"cannot write run artifacts to {out}: {exc}") from exc
    return RunArtifacts(trace_path, events_path, summary_path, plot_paths, spec_fingerprint)


def write_plots(trace: Trace, out: Path, spec: ScenarioSpec | None = None) -> tuple[Path, ...]:
    """One static SVG of |I| against time per monitored line."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "seriescomp"
    lines = sorted({c.split(".")[0] for c in trace.columns if c.endswith(".i_mag_kA")})
    paths = []
    for line_id in lines:
        fig, ax = plt.subplots(figsize=(8, 3.5))
        for ph in PHASES:
            ax.plot(trace.t, trace.column(f"{line_id}.{ph}.i_mag_kA"), lw=0.8, label=ph)
        if spec is not None:
            limit = next((ln.thermal_limit_a for ln in spec.network.lines if ln.id == line_id), None)
            if limit is not None:
                ax.axhline(limit / 1000.0, color="k", ls="--", lw=0.6, label="thermal limit")
        ax.set_xlabel("t (s)")
        ax.set_ylabel("|I| (kA)")
        ax.set_title(line_id)
        ax.legend(loc="upper right", fontsize="small")
        fig.tight_layout()
        path = out / f"{line_id}_current.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return tuple(paths)


def read_trace_csv(path: str | os.PathLike) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    with path.open(encoding="utf-8") as fh:
        fh.readline()
        has_rows = bool(fh.readline().strip())
    if not has_rows:
        return header, np.zeros((0, len(header)))
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
