import dataclasses

import numpy as np
import pytest

from stvs.caseio import FaultScenario
from stvs.powerflow import init_dynamics, solve_power_flow
from stvs.simulate import (Metrics, SimOptions, SimulationError,
                           extract_metrics, run)

from util import (null_scenario, three_bus_case, three_bus_scenario,
                  three_bus_with_dead_branch)


def _pipeline(case):
    pf = solve_power_flow(case)
    gen_inits, motor_inits = init_dynamics(case, pf)
    return pf, gen_inits, motor_inits


def test_undisturbed_system_stays_flat():
    case = three_bus_with_dead_branch()
    pf, gi, mi = _pipeline(case)
    scen = null_scenario(case)
    traj = run(case, pf, gi, mi, scen, SimOptions(dt=1e-3, t_end=0.5))
    assert np.abs(np.abs(traj.V) - np.abs(pf.V)[None, :]).max() < 1e-7
    assert np.abs(traj.psi - traj.psi[0]).max() < 1e-7
    assert np.abs(traj.omega - 1.0).max() < 1e-9


def test_fault_depresses_then_recovers(pipeline3, case3, scen3):
    traj = pipeline3["traj"]
    vm = np.abs(traj.V[:, case3.bus_index()[3]])
    k_pre = traj.t.searchsorted(scen3.t_fault) - 1
    k_flt = traj.t.searchsorted(0.5 * (scen3.t_fault + scen3.T_clr))
    assert vm[k_flt] < 0.8 * vm[k_pre]
    assert vm[-1] > 0.9 * vm[k_pre]


def test_events_are_logged(pipeline3, scen3):
    traj = pipeline3["traj"]
    kinds = [e["event"] for e in traj.events]
    assert kinds[:2] == ["fault", "clear"]
    assert traj.events[0]["t"] == pytest.approx(scen3.t_fault)
    assert traj.events[1]["t"] == pytest.approx(scen3.T_clr)
    assert traj.events[0]["dV_mag"] > 0
    assert traj.events[1]["dV_mag"] > 0


def test_state_continuous_across_switches(pipeline3):
    traj = pipeline3["traj"]
    dpsi = np.abs(np.diff(traj.psi, axis=0)).max()
    assert dpsi < 5e-3          # bounded slew, no jumps at the events


def test_rk4_converges_with_step_halving(case3):
    # moderate fault depth: deep enough that truncation error rises above
    # roundoff, mild enough that the error budget stays in the smooth regime
    scen = three_bus_scenario(fault_admittance=50.0)
    pf, gi, mi = _pipeline(case3)
    ref = run(case3, pf, gi, mi, scen,
              SimOptions(dt=6.25e-5, t_end=0.5, record_stride=16))
    errs = []
    for dt, stride in ((1e-3, 1), (5e-4, 2)):
        traj = run(case3, pf, gi, mi, scen,
                   SimOptions(dt=dt, t_end=0.5, record_stride=stride))
        assert np.abs(traj.t - ref.t).max() < 1e-12
        errs.append(np.abs(traj.psi - ref.psi).max())
    assert errs[0] < 1e-6
    assert errs[1] < errs[0] / 8   # at least cubic observed order


def test_trapezoidal_agrees_with_rk4(case3, scen3):
    pf, gi, mi = _pipeline(case3)
    a = run(case3, pf, gi, mi, scen3, SimOptions(dt=5e-4, t_end=0.5))
    b = run(case3, pf, gi, mi, scen3,
            SimOptions(dt=5e-4, t_end=0.5, integrator="trapezoidal"))
    assert np.abs(a.psi - b.psi).max() < 1e-5
    assert np.abs(np.abs(a.V) - np.abs(b.V)).max() < 1e-4


def test_simulation_is_deterministic(case3, scen3):
    pf, gi, mi = _pipeline(case3)
    a = run(case3, pf, gi, mi, scen3, SimOptions(dt=1e-3, t_end=0.5))
    b = run(case3, pf, gi, mi, scen3, SimOptions(dt=1e-3, t_end=0.5))
    assert (a.psi == b.psi).all()
    assert (a.V == b.V).all()
    assert (a.E_fd == b.E_fd).all()


def test_motor_slip_rises_during_fault():
    case = three_bus_case(motor_share=0.5)
    pf, gi, mi = _pipeline(case)
    scen = three_bus_scenario()
    traj = run(case, pf, gi, mi, scen, SimOptions(dt=1e-3, t_end=1.5))
    s = traj.slip[:, 0]
    k0 = traj.t.searchsorted(scen.t_fault) - 1
    k1 = traj.t.searchsorted(scen.T_clr)
    assert s[k1] > s[k0]                        # decelerates under the fault
    assert abs(s[-1] - s[0]) < 0.01             # and re-accelerates after
    assert not any(e["event"] == "motor_stall" for e in traj.events)


def test_exciter_respects_ceiling():
    case = three_bus_case()
    gen = dataclasses.replace(case.generators[0], K_A=200.0, E_fd_max=3.0)
    case = dataclasses.replace(case, generators=(gen,))
    pf, gi, mi = _pipeline(case)
    traj = run(case, pf, gi, mi, three_bus_scenario(),
               SimOptions(dt=1e-3, t_end=0.6))
    assert traj.E_fd.max() <= 3.0 + 1e-12


def test_divergence_is_reported():
    case = three_bus_case()
    gen = dataclasses.replace(case.generators[0], T_d0_prime=1e-4,
                              K_A=5000.0, E_fd_max=1e6)
    case = dataclasses.replace(case, generators=(gen,))
    pf, gi, mi = _pipeline(case)
    with pytest.raises(SimulationError):
        run(case, pf, gi, mi, three_bus_scenario(),
            SimOptions(dt=1e-3, t_end=1.0))


def test_metrics(pipeline3, case3, scen3):
    traj = pipeline3["traj"]
    met = extract_metrics(traj, scen3)
    i = case3.bus_index()[3]
    vm = np.abs(traj.V[:, i])
    assert met.v_nadir[i] == pytest.approx(
        vm[traj.t >= scen3.t_fault].min())
    t_chk = scen3.T_clr + scen3.checkpoint
    assert met.v_checkpoint[i] == pytest.approx(
        np.interp(t_chk, traj.t, vm), abs=1e-9)
    assert 0 <= met.recovery_time[i] <= scen3.checkpoint


def test_recovery_time_nan_when_threshold_unmet(pipeline3, scen3):
    strict = dataclasses.replace(scen3, V_th2=1.5)
    met = extract_metrics(pipeline3["traj"], strict)
    assert np.isnan(met.recovery_time).all()


def test_rejects_bad_options(case3, scen3):
    pf, gi, mi = _pipeline(case3)
    with pytest.raises(ValueError):
        run(case3, pf, gi, mi, scen3, SimOptions(dt=-1.0))
    with pytest.raises(ValueError):
        run(case3, pf, gi, mi, scen3, SimOptions(t_end=0.1))
