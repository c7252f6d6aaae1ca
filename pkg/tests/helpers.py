"""Trace analysis shared by the acceptance and unit tests."""
from __future__ import annotations

import numpy as np

from seriescomp.scenario import RunResult

PHASES = "ABC"


def longest_run(mask: np.ndarray, dt: float) -> float:
    """Duration (s) of the longest stretch of consecutive True samples."""
    best = cur = 0
    for m in mask:
        cur = cur + 1 if m else 0
        best = max(best, cur)
    return best * dt


def quadrature_error_deg(result: RunResult, line_id: str, phase: str) -> np.ndarray:
    """Angle between the injection and the ideal inductive direction j*I.

    NaN where there is no injection or no current.
    """
    v = result.trace.vinj(line_id, phase)
    i = result.trace.current(line_id, phase)
    ok = (np.abs(v) > 0) & (np.abs(i) > 0)
    err = np.full(len(v), np.nan)
    err[ok] = np.degrees(np.abs(np.angle(v[ok] / (1j * i[ok]))))
    return err


def events(result: RunResult, source: str | None = None, name: str | None = None) -> list:
    return [
        e for e in result.events
        if (source is None or e.source == source) and (name is None or e.name == name)
    ]


def event_times(result: RunResult, source: str, name: str) -> list[float]:
    return [e.t_s for e in events(result, source, name)]


def first_crossing(t: np.ndarray, x: np.ndarray, threshold: float) -> float | None:
    idx = np.flatnonzero(x > threshold)
    return float(t[idx[0]]) if len(idx) else None


def last_above(t: np.ndarray, x: np.ndarray, threshold: float) -> float | None:
    idx = np.flatnonzero(x > threshold)
    return float(t[idx[-1]]) if len(idx) else None


def cease_latencies(result: RunResult, line_id: str, thresholds: list[float]) -> list[float]:
    """Time from each upward threshold crossing to |V_inj| < 1 % of its prior value.

    Row k of the trace carries the injection used in solve k, so the value
    at the crossing row is still the pre-crossing injection.  Crossings
    that happen while the injection is already zero are skipped.
    """
    tr = result.trace
    t = tr.t
    out = []
    for ph in PHASES:
        i = tr.column(f"{line_id}.{ph}.i_mag_kA")
        v = tr.column(f"{line_id}.{ph}.vinj_mag_kV")
        for thr in thresholds:
            above = i > thr
            starts = np.flatnonzero(above[1:] & ~above[:-1]) + 1
            if len(above) and above[0]:
                starts = np.concatenate(([0], starts))
            for k in starts:
                v0 = v[k]
                if v0 == 0:
                    continue
                later = np.flatnonzero(v[k:] < 0.01 * v0)
                out.append(float(t[k + later[0]] - t[k]) if len(later) else float("inf"))
    return out
