import importlib.resources

import numpy as np
import pytest

from stvs.caseio import load_case, load_scenario
from stvs.network import build_stage, compute_R, device_blocks
from stvs.powerflow import init_dynamics, solve_power_flow
from stvs.simulate import SimOptions, run

from util import three_bus_case, three_bus_scenario


def data_path(name):
    return str(importlib.resources.files("stvs").joinpath("data", name))


@pytest.fixture(scope="session")
def ieee39():
    return load_case(data_path("ieee39.json"))


@pytest.fixture(scope="session")
def scenario_1727():
    return load_scenario(data_path("flt_1727.json"))[0]


@pytest.fixture(scope="session")
def faults8():
    return load_scenario(data_path("faults8.json"))


@pytest.fixture(scope="session")
def pf39(ieee39):
    return solve_power_flow(ieee39)


@pytest.fixture(scope="session")
def init39(ieee39, pf39):
    return init_dynamics(ieee39, pf39)


@pytest.fixture(scope="session")
def rmats39(ieee39, scenario_1727, pf39, init39):
    gen_inits, motor_inits = init39
    blocks = device_blocks(ieee39, gen_inits, motor_inits)
    psi0 = np.array([gi.psi_d0_prime for gi in gen_inits]
                    + [abs(mi.E_prime0) for mi in motor_inits])
    return {tag: compute_R(build_stage(ieee39, scenario_1727, tag, pf39,
                                       motor_inits), blocks, psi0=psi0)
            for tag in ("pre", "flt", "clr")}


@pytest.fixture(scope="session")
def traj39(ieee39, pf39, init39, scenario_1727):
    gen_inits, motor_inits = init39
    return run(ieee39, pf39, gen_inits, motor_inits, scenario_1727,
               SimOptions(dt=1e-3, t_end=1.0))


@pytest.fixture(scope="session")
def case3():
    return three_bus_case()


@pytest.fixture(scope="session")
def scen3():
    return three_bus_scenario()


@pytest.fixture(scope="session")
def pipeline3(case3, scen3):
    pf = solve_power_flow(case3)
    gen_inits, motor_inits = init_dynamics(case3, pf)
    blocks = device_blocks(case3, gen_inits, motor_inits)
    psi0 = np.array([gi.psi_d0_prime for gi in gen_inits]
                    + [abs(mi.E_prime0) for mi in motor_inits])
    rmats = {tag: compute_R(build_stage(case3, scen3, tag, pf, motor_inits),
                            blocks, psi0=psi0)
             for tag in ("pre", "flt", "clr")}
    traj = run(case3, pf, gen_inits, motor_inits, scen3,
               SimOptions(dt=1e-3, t_end=1.0))
    return dict(pf=pf, gen_inits=gen_inits, motor_inits=motor_inits,
                psi0=psi0, rmats=rmats, traj=traj)
