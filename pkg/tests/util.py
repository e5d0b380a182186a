"""Shared case builders for the test suite."""

import numpy as np

from stvs.caseio import (Branch, Bus, FaultScenario, GeneratorParams,
                         MotorParams, Shunt, SystemCase, validate_case)


def make_gen(bus, x_d=1.8, x_d_prime=0.3, x_q=1.7, T_d0_prime=6.0,
             K_A=20.0, T_e=0.5, Q_max=5.0, P_g0=0.0, **kw):
    x_ad = 0.9 * x_d
    return GeneratorParams(bus=bus, x_d=x_d, x_d_prime=x_d_prime, x_q=x_q,
                           x_ad=x_ad, x_f=x_ad ** 2 / (x_d - x_d_prime),
                           T_d0_prime=T_d0_prime, K_A=K_A, T_e=T_e,
                           Q_max=Q_max, P_g0=P_g0, **kw)


def three_bus_case(motor_share=0.0, shunt_b=0.0):
    """Slack generator at bus 1 feeding a load at bus 3 over a meshed path.

    Branch order: 0 = 1-2, 1 = 2-3, 2 = 1-3; tripping 2-3 leaves bus 3 fed
    through 1-3.
    """
    buses = (
        Bus(id=1, kind="slack", V_set=1.03),
        Bus(id=2, kind="PQ"),
        Bus(id=3, kind="PQ", P_load=0.8, Q_load=0.3, motor_share=motor_share),
    )
    branches = (
        Branch(from_bus=1, to_bus=2, r=0.01, x=0.05, b=0.02, name="1-2"),
        Branch(from_bus=2, to_bus=3, r=0.01, x=0.05, b=0.02, name="2-3"),
        Branch(from_bus=1, to_bus=3, r=0.02, x=0.10, b=0.04, name="1-3"),
    )
    shunts = (Shunt(bus=3, b=shunt_b),) if shunt_b else ()
    return validate_case(SystemCase(
        base_mva=100.0, f0=60.0, buses=buses, branches=branches,
        generators=(make_gen(1),), shunts=shunts))


def three_bus_scenario(**kw):
    """Fault at bus 2, clearing by tripping line 2-3."""
    defaults = dict(id="flt3", fault_bus=2, trip_branch=1, t_fault=0.1,
                    T_clr=0.2, monitor_bus=3)
    defaults.update(kw)
    return FaultScenario(**defaults)


def null_scenario(case, **kw):
    """No-disturbance scenario: zero fault shunt, trip of a dead branch."""
    dead = next(k for k, br in enumerate(case.branches) if not br.status)
    defaults = dict(id="null", fault_bus=case.buses[0].id, trip_branch=dead,
                    t_fault=0.1, T_clr=0.2, fault_admittance=0.0)
    defaults.update(kw)
    return FaultScenario(**defaults)


def three_bus_with_dead_branch():
    """Variant carrying an out-of-service branch usable for null scenarios."""
    base = three_bus_case()
    branches = base.branches + (
        Branch(from_bus=1, to_bus=2, r=0.05, x=0.2, b=0.0, status=False,
               name="1-2b"),)
    return validate_case(SystemCase(
        base_mva=base.base_mva, f0=base.f0, buses=base.buses,
        branches=branches, generators=base.generators))


def random_gen_params(rng):
    """Realistic randomized machine constants for property tests."""
    x_d = rng.uniform(0.8, 2.5)
    x_dp = rng.uniform(0.15, 0.45) * x_d / 1.8
    x_q = x_d * rng.uniform(0.6, 1.0)
    return make_gen(bus=1, x_d=x_d, x_d_prime=min(x_dp, 0.8 * x_q),
                    x_q=x_q, T_d0_prime=rng.uniform(3.0, 10.0),
                    K_A=rng.uniform(10.0, 100.0), T_e=rng.uniform(0.1, 1.0))
