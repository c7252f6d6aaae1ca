from __future__ import annotations

import cmath
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seriescomp.calibrate import two_source_power
from seriescomp.network import (
    Bus,
    FaultShunt,
    Line,
    Load,
    NetworkError,
    NetworkModel,
    NetworkSolver,
    NetworkState,
    Source,
    ThreePhaseSet,
    branch_current,
    build_system,
    solve_step,
)

E = 127.0


def radial(z_src=5j, z_line=10j, load: complex | None = None) -> NetworkModel:
    loads = (Load("R", load),) if load is not None else ()
    return NetworkModel(
        buses=(Bus("S"), Bus("R")),
        lines=(Line("L", "S", "R", z_line, 1000.0, "L.S", "L.R"),),
        sources=(Source("S", ThreePhaseSet.balanced(E), z_src),),
        loads=loads,
    )


def two_source(angle_rad: float, z_line=2 + 20j) -> NetworkModel:
    return NetworkModel(
        buses=(Bus("S"), Bus("R")),
        lines=(Line("L", "S", "R", z_line, 1000.0, "L.S", "L.R"),),
        sources=(
            Source("S", ThreePhaseSet.balanced(E, angle_rad), 4j),
            Source("R", ThreePhaseSet.balanced(E), 6j),
        ),
    )


def test_zero_injection_vector_is_source_only():
    sys_ = build_system(radial(load=100 + 0j), NetworkState())
    names = sys_.unknowns
    for (p, node), i in zip(names, sys_.i):
        expected = ThreePhaseSet.balanced(E)[p] / 5j if node == "S" else 0j
        assert i == expected


def test_norton_pair_of_series_injection():
    model = radial(z_line=10j, load=100 + 0j)
    vs = cmath.rect(1.0, math.pi / 2)
    base = build_system(model, NetworkState())
    inj = build_system(model, NetworkState(injections={("L", 0): vs}))
    delta = dict(zip(inj.unknowns, inj.i - base.i))
    # drop convention: I = (Vf - Vt - Vs)/Z, so +Vs/Z enters at the sending node
    assert delta[(0, "S")] == pytest.approx(0.1 + 0j, abs=1e-15)
    assert delta[(0, "R")] == pytest.approx(-0.1 + 0j, abs=1e-15)
    assert abs(delta[(0, "S")]) == pytest.approx(0.1)
    assert all(delta[(p, n)] == 0 for p in (1, 2) for n in ("S", "R"))


def test_open_line_leaves_far_bus_dead():
    model = radial()
    state = NetworkState(breakers={"L.S": (False, False, False)})
    sol = solve_step(model, state)
    assert sol.bus_voltage("S") == ThreePhaseSet.balanced(E)
    assert sol.bus_voltage("R") == ThreePhaseSet(0j, 0j, 0j)
    assert branch_current(sol, "L") == ThreePhaseSet(0j, 0j, 0j)
    assert {n for _, n in sol.dead_buses} == {"R"}


def test_bolted_fault_at_line_end():
    state = NetworkState(faults=(FaultShunt("L", 1.0, (0j, 0j, 0j)),))
    sol = solve_step(radial(z_src=5j, z_line=10j), state)
    for i in sol.branch_current("L"):
        assert abs(i) == pytest.approx(E / 15.0, rel=1e-12)
    assert abs(sol.branch_current("L").a) == pytest.approx(8.4667, abs=1e-4)


def test_open_circuit_without_fault():
    sol = solve_step(radial(), NetworkState())
    for i in sol.branch_current("L"):
        assert abs(i) <= 1e-12 * E / 10.0
    for bus in ("S", "R"):
        for v in sol.bus_voltage(bus):
            assert abs(v) == pytest.approx(E, rel=1e-12)


@pytest.mark.parametrize("deg", [5.0, 15.0, 30.0, 60.0])
def test_two_source_power_matches_closed_form(deg):
    x = 4 + 20 + 6
    model = two_source(math.radians(deg), z_line=20j)
    sol = solve_step(model, NetworkState())
    i = sol.branch_current("L").a
    e1 = model.sources[0].emf.a
    p_sim = (e1 * i.conjugate()).real
    assert p_sim == pytest.approx(two_source_power(E, E, x, math.radians(deg)), rel=1e-3)


def test_balanced_magnitudes():
    sol = solve_step(two_source(0.3), NetworkState())
    mags = sol.branch_current("L").magnitudes()
    assert max(mags) - min(mags) <= 1e-9 * max(mags)


def test_open_pole_carries_exactly_zero():
    state = NetworkState(breakers={"L.R": (True, False, True)}, faults=(FaultShunt("L", 0.5, (1 + 0j, 1 + 0j, 1 + 0j)),))
    sol = solve_step(two_source(0.3), state)
    assert sol.receiving_current("L").b == 0
    assert sol.branch_current("L").b != 0  # the S side still feeds the fault


def test_fault_split_reports_sending_side():
    model = two_source(0.2)
    state = NetworkState(faults=(FaultShunt("L", 0.3, (2 + 0j, None, None)),))
    sol = solve_step(model, state)
    vs, vr = sol.bus_voltage("S").a, sol.bus_voltage("R").a
    z = model.lines[0].series_z
    i_send, i_recv = sol.branch_current("L").a, sol.receiving_current("L").a
    # the fault point is shared by both sub-branches
    vf_from_send = vs - i_send * 0.3 * z
    vf_from_recv = vr + i_recv * 0.7 * z
    assert vf_from_send == pytest.approx(vf_from_recv, rel=1e-12)
    assert i_send - i_recv == pytest.approx(vf_from_send / 2.0, rel=1e-9)


def test_phase_to_phase_pair():
    state = NetworkState(faults=(FaultShunt("L", 0.5, pairs=((0, 1, 1 + 0j),)),))
    sol = solve_step(two_source(0.0), state)
    i = sol.branch_current("L")
    ir = sol.receiving_current("L")
    # current leaves phase A at the fault point and returns on phase B
    assert (i.a - ir.a) == pytest.approx(-(i.b - ir.b), rel=1e-9)
    assert i.c == pytest.approx(0, abs=1e-12)


def test_deterministic_bits():
    state = NetworkState(injections={("L", 1): 3 + 4j}, faults=(FaultShunt("L", 0.4, (5 + 0j, None, 5 + 0j)),))
    a = solve_step(two_source(0.4), state)
    b = solve_step(two_source(0.4), state)
    assert a.voltages == b.voltages and a.send == b.send and a.recv == b.recv


def test_kcl_residual_small():
    state = NetworkState(injections={("L", 0): 2j}, faults=(FaultShunt("L", 0.4, (5 + 0j, None, None)),))
    assert solve_step(two_source(0.4), state).kcl_residual_max <= 1e-9


def test_unknown_line():
    sol = solve_step(radial(), NetworkState())
    with pytest.raises(KeyError):
        sol.branch_current("NOPE")


@pytest.mark.parametrize(
    "model_kw, field",
    [
        ({"z_line": complex(math.nan, 1)}, "series_z"),
        ({"z_src": 0j}, "thevenin_z"),
    ],
)
def test_invalid_parameters_rejected(model_kw, field):
    with pytest.raises(NetworkError) as info:
        radial(**model_kw)
    assert any(field in v for v in info.value.violations)


def test_non_finite_injection_rejected():
    with pytest.raises(NetworkError):
        solve_step(radial(load=100 + 0j), NetworkState(injections={("L", 0): complex(math.inf, 0)}))


def test_fault_position_bounds():
    with pytest.raises(NetworkError):
        FaultShunt("L", 1.5, (0j, None, None))


def test_solver_reuses_factorization():
    solver = NetworkSolver(two_source(0.1))
    a = solver.solve(NetworkState(injections={("L", 0): 1j}))
    b = solver.solve(NetworkState(injections={("L", 0): 2j}))
    assert len(solver._cache) == 1
    assert a.send != b.send


@settings(max_examples=60, deadline=None)
@given(k=st.floats(min_value=0.01, max_value=100.0), angle=st.floats(min_value=-1.0, max_value=1.0))
def test_linearity(k, angle):
    model = two_source(angle)
    scaled = NetworkModel(
        model.buses,
        model.lines,
        tuple(Source(s.bus, ThreePhaseSet(*(k * e for e in s.emf)), s.thevenin_z) for s in model.sources),
    )
    state = NetworkState(faults=(FaultShunt("L", 0.5, (3 + 0j, None, None)),))
    a = solve_step(model, state)
    b = solve_step(scaled, state)
    flat = lambda sol: [x for row in sol.voltages + sol.send for x in row]  # noqa: E731
    for x, y in zip(flat(a), flat(b)):
        assert y == pytest.approx(k * x, rel=1e-12, abs=1e-12 * k * E)


def test_linearity_exact_for_power_of_two():
    model = two_source(0.35)
    doubled = NetworkModel(
        model.buses,
        model.lines,
        tuple(Source(s.bus, ThreePhaseSet(*(2 * e for e in s.emf)), s.thevenin_z) for s in model.sources),
    )
    a = solve_step(model, NetworkState())
    b = solve_step(doubled, NetworkState())
    assert [[2 * x for x in row] for row in a.send] == b.send
