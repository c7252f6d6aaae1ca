"""Three-phase quasi-static phasor network solver.

Phasors are plain Python ``complex`` values in RMS kV / kA, angles in
radians.  Every (phase, node) pair is one unknown of a single dense nodal
system; phases only couple through phase-to-phase fault shunts.

Series voltages on lines follow the drop convention: a line carries
``I = (V_from - V_to - V_s) / Z``, so a device injecting ``V_s = jX * I``
adds ``jX`` to the impedance seen between the line terminals.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

PHASES = ("A", "B", "C")


class ThreePhaseSet(NamedTuple):
    a: complex
    b: complex
    c: complex

    @classmethod
    def balanced(cls, magnitude: float, angle: float = 0.0) -> ThreePhaseSet:
        """Positive-sequence set with phase A at ``angle``."""
        shift = 2.0 * math.pi / 3.0
        return cls(
            cmath.rect(magnitude, angle),
            cmath.rect(magnitude, angle - shift),
            cmath.rect(magnitude, angle + shift),
        )

    def magnitudes(self) -> tuple[float, float, float]:
        return (abs(self.a), abs(self.b), abs(self.c))


ZERO3 = ThreePhaseSet(0j, 0j, 0j)


class NetworkError(ValueError):
    """Invalid network data; ``violations`` lists every problem found."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or [message]


class SolverError(RuntimeError):
    """Numerical failure while solving an energized island."""

    def __init__(self, message: str, island: list[str] | None = None):
        super().__init__(message)
        self.island = island or []


@dataclass(frozen=True)
class Bus:
    id: str
    name: str = ""
    nominal_kv: float = 220.0


@dataclass(frozen=True)
class Source:
    bus: str
    emf: ThreePhaseSet
    thevenin_z: complex


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: str
    to_bus: str
    series_z: complex
    thermal_limit_a: float
    breaker_from: str
    breaker_to: str


@dataclass(frozen=True)
class Load:
    bus: str
    shunt_z: complex


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    sources: tuple[Source, ...] = ()
    loads: tuple[Load, ...] = ()
    system_frequency: float = 60.0

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise NetworkError("; ".join(errors), errors)

    def violations(self) -> list[str]:
        errors = []
        bus_ids = [b.id for b in self.buses]
        known = set(bus_ids)
        if len(known) != len(bus_ids):
            errors.append("duplicate bus id")
        line_ids = [ln.id for ln in self.lines]
        if len(set(line_ids)) != len(line_ids):
            errors.append("duplicate line id")
        breakers = [b for ln in self.lines for b in (ln.breaker_from, ln.breaker_to)]
        if len(set(breakers)) != len(breakers):
            errors.append("duplicate breaker id")
        for ln in self.lines:
            for end in (ln.from_bus, ln.to_bus):
                if end not in known:
                    errors.append(f"line {ln.id}: unknown bus {end!r}")
            if ln.from_bus == ln.to_bus:
                errors.append(f"line {ln.id}: both ends on bus {ln.from_bus!r}")
            if not _finite(ln.series_z) or abs(ln.series_z) <= 0.0:
                errors.append(f"line {ln.id}: series_z must be finite and non-zero")
            if not (math.isfinite(ln.thermal_limit_a) and ln.thermal_limit_a > 0):
                errors.append(f"line {ln.id}: thermal_limit_a must be > 0")
        for src in self.sources:
            if src.bus not in known:
                errors.append(f"source: unknown bus {src.bus!r}")
            if not _finite(src.thevenin_z) or abs(src.thevenin_z) <= 0.0:
                errors.append(f"source at {src.bus}: thevenin_z must be finite and non-zero")
            if not all(_finite(e) for e in src.emf):
                errors.append(f"source at {src.bus}: non-finite emf")
        for load in self.loads:
            if load.bus not in known:
                errors.append(f"load: unknown bus {load.bus!r}")
            if not _finite(load.shunt_z) or abs(load.shunt_z) <= 0.0:
                errors.append(f"load at {load.bus}: shunt_z must be finite and non-zero")
        if not (math.isfinite(self.system_frequency) and self.system_frequency > 0):
            errors.append("system_frequency must be > 0")
        return errors

    def line(self, line_id: str) -> Line:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise KeyError(f"unknown line {line_id!r}")

    def breaker_ids(self) -> list[str]:
        return [b for ln in self.lines for b in (ln.breaker_from, ln.breaker_to)]


@dataclass(frozen=True)
class FaultShunt:
    """Fault shunts attached at fraction ``position`` along a line.

    ``phase_z[k]`` is the phase-k-to-ground impedance (None = no path);
    ``pairs`` lists phase-to-phase connections as ``(k, m, z)``.
    """

    line_id: str
    position: float
    phase_z: tuple[complex | None, complex | None, complex | None] = (None, None, None)
    pairs: tuple[tuple[int, int, complex], ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.position <= 1.0:
            raise NetworkError(f"fault on {self.line_id}: position must lie in [0, 1]")
        for z in self.phase_z:
            if z is not None and not (_finite(z) and z.real >= 0.0):
                raise NetworkError(f"fault on {self.line_id}: bad shunt impedance {z!r}")
        for k, m, z in self.pairs:
            if k == m or not (0 <= k < 3 and 0 <= m < 3):
                raise NetworkError(f"fault on {self.line_id}: bad phase pair ({k}, {m})")
            if not (_finite(z) and z.real >= 0.0):
                raise NetworkError(f"fault on {self.line_id}: bad shunt impedance {z!r}")


@dataclass
class NetworkState:
    """Switching and injection state applied to a model for one solve.

    ``breakers`` maps breaker id to per-phase closed flags; missing ids are
    closed.  ``injections`` maps ``(line_id, phase_index)`` to a series
    voltage drop in kV.
    """

    breakers: dict[str, tuple[bool, bool, bool]] = field(default_factory=dict)
    faults: tuple[FaultShunt, ...] = ()
    injections: dict[tuple[str, int], complex] = field(default_factory=dict)

    def breaker(self, breaker_id: str) -> tuple[bool, bool, bool]:
        return self.breakers.get(breaker_id, (True, True, True))


@dataclass
class LinearSystem:
    """Reduced nodal system ``Y v = i`` over energized (phase, node) unknowns."""

    y: np.ndarray
    i: np.ndarray
    unknowns: list[tuple[int, str]]
    dead: list[tuple[int, str]]
    islands: list[list[tuple[int, str]]]


@dataclass
class Solution:
    """Solved bus voltages (kV) and line currents (kA) for one step.

    ``send`` holds the current leaving the sending terminal in the line's
    positive direction; ``recv`` holds the current arriving at the receiving
    terminal.  They differ only on a faulted line.
    """

    bus_ids: list[str]
    line_ids: list[str]
    voltages: list[list[complex]]  # [phase][bus]
    send: list[list[complex]]  # [phase][line]
    recv: list[list[complex]]
    kcl_residual_max: float
    dead_buses: list[tuple[int, str]] = field(default_factory=list)

    def bus_voltage(self, bus_id: str) -> ThreePhaseSet:
        k = self.bus_ids.index(bus_id)
        return ThreePhaseSet(*(self.voltages[p][k] for p in range(3)))

    def branch_current(self, line_id: str) -> ThreePhaseSet:
        try:
            k = self.line_ids.index(line_id)
        except ValueError:
            raise KeyError(f"unknown line {line_id!r}") from None
        return ThreePhaseSet(*(self.send[p][k] for p in range(3)))

    def receiving_current(self, line_id: str) -> ThreePhaseSet:
        k = self.line_ids.index(line_id)
        return ThreePhaseSet(*(self.recv[p][k] for p in range(3)))


def branch_current(solution: Solution, line_id: str) -> ThreePhaseSet:
    """Relay-side (sending-end) current of a line."""
    return solution.branch_current(line_id)


def _finite(z: complex) -> bool:
    return math.isfinite(z.real) and math.isfinite(z.imag)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, k: int) -> int:
        while self.parent[k] != k:
            self.parent[k] = self.parent[self.parent[k]]
            k = self.parent[k]
        return k

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


class _Topology:
    """Factorized network for one switching/fault configuration."""

    def __init__(self, model: NetworkModel, breakers_key, faults: tuple[FaultShunt, ...], cond_limit: float):
        self.model = model
        nb = len(model.buses)
        bus_index = {b.id: k for k, b in enumerate(model.buses)}
        self.node_names = [b.id for b in model.buses]
        fault_by_line = {}
        for f in faults:
            if f.line_id not in {ln.id for ln in model.lines}:
                raise NetworkError(f"fault on unknown line {f.line_id!r}")
            if f.line_id in fault_by_line:
                raise NetworkError(f"more than one fault on line {f.line_id!r}")
            fault_by_line[f.line_id] = f
        breakers = dict(breakers_key)

        # segments: (phase, node_from, node_to, z, line_pos, role) role 0=send 1=recv 2=whole
        n_nodes = nb
        self.line_layout = []  # per line: (f_node or None, z1, z2)
        for ln in model.lines:
            f = fault_by_line.get(ln.id)
            if f is None:
                self.line_layout.append((None, ln.series_z, None, f))
            else:
                self.line_layout.append((n_nodes, ln.series_z * f.position, ln.series_z * (1.0 - f.position), f))
                self.node_names.append(f"{ln.id}@{f.position:g}")
                n_nodes += 1
        self.n_nodes = n_nodes
        size = 3 * n_nodes

        def ix(p, n):
            return p * n_nodes + n

        uf = _UnionFind(size)
        # admittance branches between raw unknowns; (a, b, y) with b=-1 for ground
        raw = []
        grounded = set()
        sources = [False] * size
        self.segments = []  # per (line, phase): list of (a, b, z, closed)
        for li, ln in enumerate(model.lines):
            f_node, z1, z2, f = self.line_layout[li]
            bf = breakers.get(ln.breaker_from, (True, True, True))
            bt = breakers.get(ln.breaker_to, (True, True, True))
            fb, tb = bus_index[ln.from_bus], bus_index[ln.to_bus]
            per_phase = []
            for p in range(3):
                if f_node is None:
                    closed = bf[p] and bt[p]
                    segs = [(ix(p, fb), ix(p, tb), ln.series_z, closed)]
                else:
                    segs = [(ix(p, fb), ix(p, f_node), z1, bf[p]), (ix(p, f_node), ix(p, tb), z2, bt[p])]
                for a, b, z, closed in segs:
                    if not closed:
                        continue
                    if z == 0:
                        uf.union(a, b)
                    else:
                        raw.append((a, b, 1.0 / z))
                per_phase.append(segs)
            self.segments.append(per_phase)
            if f is not None:
                for p, zf in enumerate(f.phase_z):
                    if zf is None:
                        continue
                    if zf == 0:
                        grounded.add(ix(p, f_node))
                    else:
                        raw.append((ix(p, f_node), -1, 1.0 / zf))
                for k, m, zf in f.pairs:
                    if zf == 0:
                        uf.union(ix(k, f_node), ix(m, f_node))
                    else:
                        raw.append((ix(k, f_node), ix(m, f_node), 1.0 / zf))
        for src in model.sources:
            b = bus_index[src.bus]
            for p in range(3):
                raw.append((ix(p, b), -1, 1.0 / src.thevenin_z))
                sources[ix(p, b)] = True
        for load in model.loads:
            b = bus_index[load.bus]
            for p in range(3):
                raw.append((ix(p, b), -1, 1.0 / load.shunt_z))

        # merged representatives
        rep = [uf.find(k) for k in range(size)]
        grounded_reps = {rep[k] for k in grounded}
        # connectivity between representatives (ground excluded)
        conn = _UnionFind(size)
        for a, b, _ in raw:
            if b >= 0:
                conn.union(rep[a], rep[b])
        groups: dict[int, list[int]] = {}
        for r in sorted(set(rep)):
            groups.setdefault(conn.find(r), []).append(r)
        live_reps = []
        self.islands = []
        for members in groups.values():
            has_source = any(sources[k] for k in range(size) if rep[k] in members)
            if has_source:
                live_reps.extend(r for r in members if r not in grounded_reps)
                self.islands.append(members)
        live_reps.sort()
        col = {r: k for k, r in enumerate(live_reps)}
        n = len(live_reps)
        y = np.zeros((n, n), dtype=complex)
        for a, b, adm in raw:
            ra = col.get(rep[a])
            rb = col.get(rep[b]) if b >= 0 else None
            if ra is not None:
                y[ra, ra] += adm
            if rb is not None:
                y[rb, rb] += adm
            if ra is not None and rb is not None:
                y[ra, rb] -= adm
                y[rb, ra] -= adm
        self.y = y
        self.size = size
        self.rep = rep
        self.col = col
        # unknown index per raw (phase,node); -1 for zero-voltage nodes
        self.node_col = np.array([col.get(rep[k], -1) for k in range(size)], dtype=np.intp)
        self.dead = [
            (k // n_nodes, self.node_names[k % n_nodes])
            for k in range(size)
            if rep[k] not in col and rep[k] not in grounded_reps
        ]
        if n:
            cond = np.linalg.cond(y)
            if not math.isfinite(cond) or cond > cond_limit:
                island = [f"{PHASES[k // n_nodes]}:{self.node_names[k % n_nodes]}" for k in live_reps]
                raise SolverError(f"ill-conditioned nodal matrix (cond={cond:.3g})", island)
            self.y_inv = np.linalg.inv(y)
        else:
            self.y_inv = np.zeros((0, 0), dtype=complex)
        self.base_i = np.zeros(n, dtype=complex)
        for src in model.sources:
            b = bus_index[src.bus]
            for p in range(3):
                c = self.node_col[ix(p, b)]
                if c >= 0:
                    self.base_i[c] += src.emf[p] / src.thevenin_z
        self.ix = ix

    def unknown_names(self) -> list[tuple[int, str]]:
        names = [None] * len(self.col)
        for r, c in self.col.items():
            names[c] = (r // self.n_nodes, self.node_names[r % self.n_nodes])
        return names

    def injection_vector(self, injections: dict[tuple[str, int], complex]) -> np.ndarray:
        i = self.base_i.copy()
        for li, ln in enumerate(self.model.lines):
            for p in range(3):
                vs = injections.get((ln.id, p))
                if not vs:
                    continue
                a, b, z, closed = self._injection_segment(li, p)
                if not closed:
                    continue
                ca, cb = self.node_col[a], self.node_col[b]
                if ca >= 0:
                    i[ca] += vs / z
                if cb >= 0:
                    i[cb] -= vs / z
        return i

    def _injection_segment(self, li: int, p: int):
        segs = self.segments[li][p]
        if len(segs) == 2 and segs[0][2] == 0:
            return segs[1]
        return segs[0]

    def solve(self, injections: dict[tuple[str, int], complex]) -> Solution:
        i = self.injection_vector(injections)
        v_live = self.y_inv @ i
        if len(v_live):
            resid = np.abs(self.y @ v_live - i).max()
            scale = max(np.abs(i).max(), (np.abs(self.y) @ np.abs(v_live)).max())
            kcl = float(resid / scale) if scale > 0 else 0.0
        else:
            kcl = 0.0
        v_all = np.where(self.node_col >= 0, v_live[self.node_col] if len(v_live) else 0j, 0j)
        v_all = v_all.tolist()
        nn = self.n_nodes
        nb = len(self.model.buses)
        voltages = [v_all[p * nn:p * nn + nb] for p in range(3)]
        send = [[], [], []]
        recv = [[], [], []]
        for li, ln in enumerate(self.model.lines):
            for p in range(3):
                segs = self.segments[li][p]
                vs = injections.get((ln.id, p), 0j)
                inj_seg = self._injection_segment(li, p)
                currents = []
                for seg in segs:
                    a, b, z, closed = seg
                    if not closed or z == 0:
                        currents.append(None)
                        continue
                    drop = vs if seg is inj_seg else 0j
                    currents.append((v_all[a] - v_all[b] - drop) / z)
                if len(segs) == 1:
                    cur = currents[0] if currents[0] is not None else 0j
                    send[p].append(cur)
                    recv[p].append(cur)
                    continue
                i1, i2 = currents
                if i1 is None or i2 is None:
                    # zero-impedance or open segment: KCL at the fault node
                    f_node = self.line_layout[li][0]
                    shunt = self._fault_node_outflow(li, p, f_node, v_all)
                    if i1 is None:
                        i1 = (shunt + (i2 or 0j)) if segs[0][3] else 0j
                    if i2 is None:
                        i2 = (i1 - shunt) if segs[1][3] else 0j
                send[p].append(i1)
                recv[p].append(i2)
        return Solution(
            bus_ids=[b.id for b in self.model.buses],
            line_ids=[ln.id for ln in self.model.lines],
            voltages=voltages,
            send=send,
            recv=recv,
            kcl_residual_max=kcl,
            dead_buses=[d for d in self.dead if d[1] in {b.id for b in self.model.buses}],
        )

    def _fault_node_outflow(self, li: int, p: int, f_node: int, v_all: list[complex]) -> complex:
        f = self.line_layout[li][3]
        v = v_all[self.ix(p, f_node)]
        out = 0j
        zf = f.phase_z[p]
        if zf is not None and zf != 0:
            out += v / zf
        for k, m, z in f.pairs:
            if z == 0:
                continue
            if k == p:
                out += (v - v_all[self.ix(m, f_node)]) / z
            elif m == p:
                out += (v - v_all[self.ix(k, f_node)]) / z
        return out


def _breakers_key(model: NetworkModel, state: NetworkState):
    return tuple((b, tuple(state.breaker(b))) for b in model.breaker_ids())


class NetworkSolver:
    """Caches one factorization per switching/fault configuration."""

    def __init__(self, model: NetworkModel, cond_limit: float = 1e12):
        self.model = model
        self.cond_limit = cond_limit
        self._cache: dict = {}

    def topology(self, state: NetworkState) -> _Topology:
        key = (_breakers_key(self.model, state), state.faults)
        topo = self._cache.get(key)
        if topo is None:
            for inj in state.injections.values():
                if not _finite(inj):
                    raise NetworkError("non-finite series injection")
            topo = _Topology(self.model, key[0], state.faults, self.cond_limit)
            self._cache[key] = topo
        return topo

    def build_system(self, state: NetworkState) -> LinearSystem:
        topo = self.topology(state)
        return LinearSystem(
            y=topo.y.copy(),
            i=topo.injection_vector(state.injections),
            unknowns=topo.unknown_names(),
            dead=list(topo.dead),
            islands=[
                [(r // topo.n_nodes, topo.node_names[r % topo.n_nodes]) for r in members]
                for members in topo.islands
            ],
        )

    def solve(self, state: NetworkState) -> Solution:
        for inj in state.injections.values():
            if not _finite(inj):
                raise NetworkError("non-finite series injection")
        return self.topology(state).solve(state.injections)


def build_system(model: NetworkModel, state: NetworkState) -> LinearSystem:
    return NetworkSolver(model).build_system(state)


def solve_step(model: NetworkModel, state: NetworkState) -> Solution:
    """Solve bus voltages and line currents for one network state."""
    return NetworkSolver(model).solve(state)
