import dataclasses

import numpy as np
import pytest

from stvs.caseio import Branch, Bus, SystemCase, validate_case
from stvs.network import (NetworkError, build_stage, check_connectivity,
                          compute_R, device_blocks, electrical_distance,
                          expand_real, extended_matrix,
                          static_load_admittances, superpose_voltage)
from stvs.powerflow import build_ybus, init_dynamics, solve_power_flow
from stvs.simulate import network_solve

from util import make_gen, three_bus_case


def test_expand_real_represents_complex_product(ieee39):
    Y = build_ybus(ieee39)
    M = expand_real(Y)
    rng = np.random.default_rng(0)
    v = rng.normal(size=len(Y)) + 1j * rng.normal(size=len(Y))
    iv = np.empty(2 * len(Y))
    iv[0::2], iv[1::2] = v.real, v.imag
    out = M @ iv
    ref = Y @ v
    assert np.abs(out[0::2] - ref.real).max() < 1e-12
    assert np.abs(out[1::2] - ref.imag).max() < 1e-12


def test_static_loads_reproduce_power(ieee39, pf39):
    y = static_load_admittances(ieee39, pf39)
    for i, b in enumerate(ieee39.buses):
        s = pf39.V[i] * np.conj(y[i] * pf39.V[i])
        assert s.real == pytest.approx(b.P_load, abs=1e-12)
        assert s.imag == pytest.approx(b.Q_load, abs=1e-12)


def test_fault_stage_adds_shunt(ieee39, scenario_1727, pf39):
    pre = build_stage(ieee39, scenario_1727, "pre", pf39)
    flt = build_stage(ieee39, scenario_1727, "flt", pf39)
    f = ieee39.bus_index()[scenario_1727.fault_bus]
    d = flt.Y - pre.Y
    assert d[f, f] == pytest.approx(-1j * scenario_1727.fault_admittance)
    d[f, f] = 0
    assert np.abs(d).max() == 0


def test_clearing_stage_removes_branch(ieee39, scenario_1727, pf39):
    pre = build_stage(ieee39, scenario_1727, "pre", pf39)
    clr = build_stage(ieee39, scenario_1727, "clr", pf39)
    br = ieee39.branches[scenario_1727.trip_branch]
    i, j = ieee39.bus_index()[br.from_bus], ieee39.bus_index()[br.to_bus]
    assert clr.Y[i, j] == 0
    assert pre.Y[i, j] != 0


def test_islanding_raises():
    case = validate_case(SystemCase(
        base_mva=100.0, f0=60.0,
        buses=(Bus(id=1, kind="slack", V_set=1.0),
               Bus(id=2, kind="PQ", P_load=0.1)),
        branches=(Branch(from_bus=1, to_bus=2, r=0.01, x=0.1),),
        generators=(make_gen(1),)))
    with pytest.raises(NetworkError):
        check_connectivity(case, skip_branch=0)


def test_frozen_flux_superposition_is_exact(ieee39, scenario_1727, pf39,
                                            init39, rmats39):
    """With fluxes and angles frozen, the R superposition reproduces the
    exact network solve: complex responses to machine precision and the
    scalar rows summing to the stage-entry voltage magnitude."""
    gen_inits, motor_inits = init39
    blocks = device_blocks(ieee39, gen_inits, motor_inits)
    psi0 = np.array([gi.psi_d0_prime for gi in gen_inits])
    for tag in ("pre", "flt", "clr"):
        stage = build_stage(ieee39, scenario_1727, tag, pf39, motor_inits)
        v_exact = network_solve(stage, blocks, psi0)
        rm = rmats39[tag]
        v_sup = superpose_voltage(rm, psi0)
        assert np.abs(v_sup - v_exact).max() < 1e-12
        assert np.abs(rm.R @ psi0 - np.abs(v_exact)).max() < 1e-12


def test_prefault_superposition_matches_power_flow(ieee39, pf39, rmats39,
                                                   init39):
    """Pre-fault stage: device fluxes reconstruct the power-flow voltages."""
    gen_inits, _ = init39
    psi0 = np.array([gi.psi_d0_prime for gi in gen_inits])
    v = superpose_voltage(rmats39["pre"], psi0)
    assert np.abs(np.abs(v) - np.abs(pf39.V)).max() < 1e-8


def test_fault_stage_R_rows_positive(ieee39, rmats39, scenario_1727):
    """Every generator supports the monitored bus during the fault."""
    row = ieee39.bus_index()[scenario_1727.monitored_bus()]
    assert (rmats39["flt"].R[row] > 0).all()


def test_R_scales_linearly(ieee39, rmats39, init39):
    gen_inits, _ = init39
    psi0 = np.array([gi.psi_d0_prime for gi in gen_inits])
    r = rmats39["flt"].R
    assert np.abs(r @ (2 * psi0) - 2 * (r @ psi0)).max() < 1e-12


def test_motor_enters_device_columns():
    case = three_bus_case(motor_share=0.5)
    pf = solve_power_flow(case)
    gen_inits, motor_inits = init_dynamics(case, pf)
    blocks = device_blocks(case, gen_inits, motor_inits)
    assert [(b.kind, b.bus) for b in blocks] == [("gen", 1), ("motor", 3)]
    psi = np.array([gen_inits[0].psi_d0_prime, abs(motor_inits[0].E_prime0)])
    from stvs.caseio import FaultScenario
    scen = FaultScenario(id="x", fault_bus=2, trip_branch=1)
    stage = build_stage(case, scen, "pre", pf, motor_inits)
    v = network_solve(stage, blocks, psi)
    assert np.abs(np.abs(v) - np.abs(pf.V)).max() < 1e-8


def test_electrical_distance_is_metric_like(ieee39, pf39):
    d = electrical_distance(ieee39, pf39)
    assert np.abs(np.diag(d)).max() < 1e-12
    assert np.abs(d - d.T).max() < 1e-12
    idx = ieee39.bus_index()
    # adjacent buses are closer than remote ones
    assert d[idx[17], idx[27]] < d[idx[17], idx[39]]
