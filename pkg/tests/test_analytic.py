import dataclasses
import math

import numpy as np
import pytest

from stvs.analytic import (analytic_Q, analytic_efd, analytic_flux,
                           analytic_flux_spn, analytic_vrc_term,
                           compare_with_simulation, flux_coefficients,
                           stepped_profile)
from stvs.models import stator_algebra
from stvs.powerflow import init_dynamics, solve_power_flow
from stvs.simulate import SimOptions, run

from oracles import expm_flux, stepped_ode_flux, vrc_quadrature
from util import (make_gen, null_scenario, random_gen_params,
                  three_bus_scenario, three_bus_with_dead_branch)


def _random_stage(rng):
    g = random_gen_params(rng)
    v0 = rng.uniform(0.95, 1.1)
    v_stage = rng.uniform(0.1, 0.95) * v0
    v_q = v_stage * rng.uniform(0.5, 1.0)
    v_d = math.sqrt(v_stage ** 2 - v_q ** 2)
    psi0 = rng.uniform(0.7, 1.3)
    efd0 = rng.uniform(1.0, 3.0)
    co = flux_coefficients(g, v0, v_stage, v_q, psi0, efd0, efd0,
                           v_d_stage=v_d)
    return g, v0, v_stage, v_q, psi0, efd0, co


def test_no_disturbance_gives_constant_flux():
    g = make_gen(1)
    v0 = 1.0
    v_q = 0.9
    # steady state: field voltage balances the internal EMF
    psi0 = 1.1
    i_d = (psi0 - v_q) / g.x_d_prime
    e_q0 = psi0 + (g.x_d - g.x_d_prime) * i_d
    co = flux_coefficients(g, v0, v0, v_q, psi0, e_q0, e_q0)
    assert co.a1 == pytest.approx(0.0, abs=1e-12)
    assert co.a2 == pytest.approx(0.0, abs=1e-12)
    assert co.a3 == pytest.approx(psi0, abs=1e-12)


def test_flux_conservation_at_stage_start():
    rng = np.random.default_rng(11)
    for _ in range(200):
        *_, co = _random_stage(rng)
        assert co.a1 + co.a2 + co.a3 == pytest.approx(co.psi_start,
                                                      abs=1e-12)
        assert analytic_flux(co, 0.0) == pytest.approx(co.psi_start,
                                                       abs=1e-12)


def test_flux_asymptote():
    rng = np.random.default_rng(12)
    *_, co = _random_stage(rng)
    t = 25 * max(co.T_d, co.T_e)
    assert analytic_flux(co, t) == pytest.approx(co.a3, abs=1e-6)


def test_representative_set_matches_eigen_oracle():
    g = make_gen(1, x_d=2.0, x_d_prime=0.3, x_q=1.9, T_d0_prime=6.0,
                 K_A=50.0, T_e=0.5)
    v0, v_flt, psi0, efd0 = 1.0, 0.5, 1.05, 1.2
    v_q = 0.45
    co = flux_coefficients(g, v0, v_flt, v_q, psi0, efd0, efd0)
    t = np.linspace(0.0, 1.0, 101)
    ref = expm_flux(g, v0, v_flt, v_q, psi0, efd0, efd0, t)
    assert np.abs(analytic_flux(co, t) - ref).max() < 1e-9


def test_flux_matches_ode_oracle_randomized():
    rng = np.random.default_rng(13)
    t = np.linspace(0.0, 0.8, 33)
    for _ in range(30):
        g, v0, v_stage, v_q, psi0, efd0, co = _random_stage(rng)
        ref = stepped_ode_flux(g, v0, v_stage, v_q, psi0, efd0, efd0, t)
        assert np.abs(analytic_flux(co, t) - ref).max() < 1e-6


def test_repeated_root_uses_limiting_form():
    g = make_gen(1, x_d=1.8, x_d_prime=0.3, T_d0_prime=6.0)
    # tune the exciter lag onto the resonance T_e * x_d = T_d0' * x_d'
    g = dataclasses.replace(g, T_e=g.T_d0_prime * g.x_d_prime / g.x_d)
    co = flux_coefficients(g, 1.0, 0.5, 0.45, 1.05, 1.2, 1.2)
    assert co.repeated_root
    assert co.b_secular != 0.0
    t = np.linspace(0.0, 1.0, 41)
    ref = expm_flux(g, 1.0, 0.5, 0.45, 1.05, 1.2, 1.2, t)
    assert np.abs(analytic_flux(co, t) - ref).max() < 1e-9
    assert analytic_flux(co, 0.0) == pytest.approx(1.05, abs=1e-12)


def test_q_decomposition_identity_and_zero_start():
    rng = np.random.default_rng(14)
    for _ in range(50):
        g, *_, co = _random_stage(rng)
        for t in (0.0, 0.05, 0.3, 1.0):
            q_spon, q_exc, q_g = analytic_Q(co, t)
            _, _, _, q_ref = stator_algebra(analytic_flux(co, t),
                                            co.v_d_stage, co.v_q_stage, g)
            assert q_spon + q_exc == pytest.approx(q_ref, abs=1e-12)
        # at stage entry both channels see the same flux: no control share
        assert abs(analytic_Q(co, 0.0)[1]) < 1e-12


def test_zero_gain_exciter_has_no_control_channel():
    g = make_gen(1, K_A=0.0)
    psi0, efd0 = 1.05, 1.2
    co = flux_coefficients(g, 1.0, 0.5, 0.45, psi0, efd0, efd0)
    for t in np.linspace(0.0, 2.0, 21):
        assert analytic_Q(co, t)[1] == pytest.approx(0.0, abs=1e-12)


def test_spontaneous_decays_while_control_rises():
    g = make_gen(1, x_d=2.0, x_d_prime=0.3, x_q=1.9, T_d0_prime=6.0,
                 K_A=50.0, T_e=0.5)
    co = flux_coefficients(g, 1.0, 0.5, 0.45, 1.05, 1.2, 1.2)
    t = np.linspace(0.0, 2.0, 200)
    q_spon, q_exc, _ = analytic_Q(co, t)
    assert (np.diff(q_spon) < 1e-12).all()
    assert (np.diff(q_exc) > -1e-12).all()
    assert q_exc[-1] > q_spon[-1]          # control eventually dominates


def test_sign_structure_statistical():
    """Fault-stage coefficients: A_1 demagnetizing, A_2 magnetizing for
    nearly all draws in the normal regime where the exciter lag is shorter
    than the effective field time constant (statistical, >= 95%)."""
    rng = np.random.default_rng(15)
    n = good = 0
    while n < 400:
        g = random_gen_params(rng)
        if g.T_e * g.x_d >= g.T_d0_prime * g.x_d_prime:
            continue
        v0 = rng.uniform(0.98, 1.08)
        v_q0 = v0 * rng.uniform(0.7, 1.0)
        psi0 = rng.uniform(0.9, 1.25)
        e_q0 = psi0 + (g.x_d - g.x_d_prime) * (psi0 - v_q0) / g.x_d_prime
        frac = rng.uniform(0.1, 0.7)        # a genuinely deep fault
        co = flux_coefficients(g, v0, frac * v0, frac * v_q0, psi0,
                               e_q0, e_q0)
        n += 1
        if co.a1 < 0 and co.a2 > 0:
            good += 1
    assert good >= 0.95 * n


def test_vrc_term_matches_quadrature():
    rng = np.random.default_rng(16)
    for _ in range(20):
        *_, co = _random_stage(rng)
        r = rng.uniform(0.05, 0.5)
        ref = vrc_quadrature(lambda t: analytic_flux(co, t), r, 0.4)
        assert analytic_vrc_term(co, r, 0.4) == pytest.approx(ref, abs=1e-10)


def test_vrc_term_repeated_root_matches_quadrature():
    g = make_gen(1)
    g = dataclasses.replace(g, T_e=g.T_d0_prime * g.x_d_prime / g.x_d)
    co = flux_coefficients(g, 1.0, 0.5, 0.45, 1.05, 1.2, 1.2)
    ref = vrc_quadrature(lambda t: analytic_flux(co, t), 0.3, 0.4)
    assert analytic_vrc_term(co, 0.3, 0.4) == pytest.approx(ref, abs=1e-10)


def test_vrc_term_limits():
    rng = np.random.default_rng(17)
    *_, co = _random_stage(rng)
    # shrinking window converges on the stage-start flux
    assert analytic_vrc_term(co, 1.0, 1e-9) == pytest.approx(
        co.psi_start, abs=1e-6)
    # constant flux gives R * A_3 for any window
    flat = dataclasses.replace(co, a1=0.0, a2=0.0, b_secular=0.0)
    assert analytic_vrc_term(flat, 0.4, 0.25) == pytest.approx(0.4 * flat.a3)
    with pytest.raises(ValueError):
        analytic_vrc_term(co, 1.0, 0.0)


def test_exciter_trace_is_consistent():
    rng = np.random.default_rng(18)
    g, v0, v_stage, v_q, psi0, efd0, co = _random_stage(rng)
    assert analytic_efd(co, 0.0) == pytest.approx(efd0, abs=1e-12)
    assert analytic_efd(co, 50 * co.T_e) == pytest.approx(co.e_inf, abs=1e-9)


def _stepped_inputs(case, scen):
    from stvs.network import build_stage, compute_R, device_blocks
    pf = solve_power_flow(case)
    gen_inits, motor_inits = init_dynamics(case, pf)
    blocks = device_blocks(case, gen_inits, motor_inits)
    psi0 = np.array([gi.psi_d0_prime for gi in gen_inits]
                    + [abs(mi.E_prime0) for mi in motor_inits])
    r_flt = compute_R(build_stage(case, scen, "flt", pf, motor_inits),
                      blocks, psi0=psi0)
    r_clr = compute_R(build_stage(case, scen, "clr", pf, motor_inits),
                      blocks, psi0=psi0)
    return pf, gen_inits, motor_inits, r_flt, r_clr


def test_null_fault_profile_is_flat():
    case = three_bus_with_dead_branch()
    scen = null_scenario(case)
    pf, gen_inits, motor_inits, r_flt, r_clr = _stepped_inputs(case, scen)
    prof = stepped_profile(case, pf, gen_inits, motor_inits, scen,
                           r_flt, r_clr)
    assert prof.v_flt == pytest.approx(prof.v_0, abs=1e-8)
    assert prof.v_clr == pytest.approx(prof.v_0, abs=1e-8)
    t = np.linspace(0.0, 1.0, 50)
    assert np.abs(prof.gen_flux(0, t)
                  - gen_inits[0].psi_d0_prime).max() < 1e-6


def test_terminal_fault_collapses_stage_voltage():
    case = three_bus_with_dead_branch()
    scen = null_scenario(case)
    scen = dataclasses.replace(scen, id="bolt", fault_bus=1,
                               fault_admittance=1e6)
    pf, gen_inits, motor_inits, r_flt, r_clr = _stepped_inputs(case, scen)
    prof = stepped_profile(case, pf, gen_inits, motor_inits, scen,
                           r_flt, r_clr)
    assert prof.v_flt[0] < 1e-3


def test_ieee39_stage_voltages_match_simulation(ieee39, scenario_1727, pf39,
                                                init39, rmats39, traj39):
    gen_inits, motor_inits = init39
    prof = stepped_profile(ieee39, pf39, gen_inits, motor_inits,
                           scenario_1727, rmats39["flt"], rmats39["clr"])
    gidx = [ieee39.bus_index()[g.bus] for g in ieee39.generators]
    vm = np.abs(traj39.V)
    k = traj39.t.searchsorted(scenario_1727.t_fault + 1.5e-3)
    rel = np.abs(prof.v_flt - vm[k, gidx]) / vm[k, gidx]
    assert rel.max() < 0.05


def test_comparison_report_structure(ieee39, scenario_1727, pf39, init39,
                                     rmats39, traj39):
    gen_inits, motor_inits = init39
    prof = stepped_profile(ieee39, pf39, gen_inits, motor_inits,
                           scenario_1727, rmats39["flt"], rmats39["clr"])
    rep = compare_with_simulation(prof, traj39, window=0.4)
    assert set(rep["generators"]) == {str(g.bus) for g in ieee39.generators}
    g0 = rep["generators"]["30"]
    assert g0["mean_err_fault"] <= g0["max_err_fault"]
    assert rep["max_err_fault"] == max(
        v["max_err_fault"] for v in rep["generators"].values())
