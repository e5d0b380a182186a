"""Short-term voltage stability toolkit.

Simulates fault transients on bus/branch cases, computes flux-linkage based
voltage-inertia (VIC) and voltage-recovery (VRC) indexes, and derives
per-fault security requirements (VIR/VRR) for planning and var dispatch.
"""

from stvs.caseio import (
    Branch,
    Bus,
    FaultScenario,
    GeneratorParams,
    MotorParams,
    OperatingPoint,
    Shunt,
    SystemCase,
    load_case,
    save_case,
    apply_operating_point,
)
from stvs.powerflow import solve_power_flow, init_dynamics, initial_flux
from stvs.simulate import SimOptions, run
from stvs.network import build_stage, compute_R
from stvs.indexes import compute_vic, compute_vrc, assess_requirements, check_security

__all__ = [
    "Branch",
    "Bus",
    "FaultScenario",
    "GeneratorParams",
    "MotorParams",
    "OperatingPoint",
    "Shunt",
    "SystemCase",
    "load_case",
    "save_case",
    "apply_operating_point",
    "solve_power_flow",
    "init_dynamics",
    "initial_flux",
    "SimOptions",
    "run",
    "build_stage",
    "compute_R",
    "compute_vic",
    "compute_vrc",
    "assess_requirements",
    "check_security",
]
