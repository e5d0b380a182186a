"""Closed-form flux and reactive-power engine under the stepped-voltage
approximation.

Each generator terminal voltage is held constant within the fault stage and
within the early post-clearing stage. The coupled flux/exciter ODE pair is
then linear with constant forcing and solves to

    psi'_d(t) = A_1 exp(-t/T'_d) + A_2 exp(-t/T_e) + A_3

per stage (plus a t*exp term in the repeated-root case). The spontaneous
component evolves the same way with the exciter frozen at its initial
output, and the excitation-control component is the remainder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from stvs.caseio import FaultScenario, GeneratorParams, SystemCase
from stvs.models import motor_coefficients, xy_to_dq
from stvs.network import RMatrix, superpose_voltage
from stvs.powerflow import PowerFlowSolution


@dataclass(frozen=True)
class FluxCoefficients:
    """One stage of the piecewise closed-form flux solution."""
    a1: float
    a2: float
    a3: float
    b_secular: float          # coefficient of t*exp(-t/T_d); nonzero only
    T_d: float                # when T_e*x_d == T_d0'*x_d' (repeated root)
    T_e: float
    psi_start: float
    efd_start: float
    e_inf: float              # exciter asymptote for this stage
    v_stage: float
    v_d_stage: float
    v_q_stage: float
    x_d_prime: float
    x_q: float
    # spontaneous branch (exciter frozen at E_fd0)
    spn_a1: float
    spn_inf: float
    repeated_root: bool = False

    # Auxiliary coefficient set used in reports: the excitation-control
    # branch is exc(t) = a4*exp(-t/T_d) + a5*exp(-t/T_e) + a6 and the
    # spontaneous branch spn(t) = a7*exp(-t/T_d) + a8.
    @property
    def a4(self):
        return self.a1 - self.spn_a1

    @property
    def a5(self):
        return self.a2

    @property
    def a6(self):
        return self.a3 - self.spn_inf

    @property
    def a7(self):
        return self.spn_a1

    @property
    def a8(self):
        return self.spn_inf


def flux_coefficients(params: GeneratorParams, v_0, v_stage, v_q_stage,
                      psi_start, efd_start, e_fd0,
                      psi_spn_start=None, v_d_stage=0.0) -> FluxCoefficients:
    """Stage coefficients of the stepped-voltage flux solution.

    ``v_0`` is the exciter reference (pre-fault terminal voltage),
    ``psi_start``/``efd_start`` the state at the stage boundary, ``e_fd0``
    the frozen exciter output defining the spontaneous branch. The
    repeated-root case T_e*x_d == T_d0'*x_d' switches to the limiting
    t*exp(-t/tau) form.
    """
    x_d, x_dp = params.x_d, params.x_d_prime
    T_d = params.T_d_prime
    T_e = params.T_e
    e_inf = e_fd0 + params.K_A * (v_0 - v_stage)
    a3 = (v_q_stage * (x_d - x_dp) + e_inf * x_dp) / x_d
    den = x_d * T_e - params.T_d0_prime * x_dp
    repeated = abs(den) < 1e-12 * x_d * max(T_e, T_d)
    if repeated:
        a2 = 0.0
        b = (efd_start - e_inf) / params.T_d0_prime
        a1 = psi_start - a3
    else:
        a2 = (efd_start - e_inf) * x_dp * T_e / den
        b = 0.0
        a1 = psi_start - a2 - a3
    if psi_spn_start is None:
        psi_spn_start = psi_start
    spn_inf = (v_q_stage * (x_d - x_dp) + e_fd0 * x_dp) / x_d
    return FluxCoefficients(
        a1=a1, a2=a2, a3=a3, b_secular=b, T_d=T_d, T_e=T_e,
        psi_start=psi_start, efd_start=efd_start, e_inf=e_inf,
        v_stage=v_stage, v_d_stage=v_d_stage, v_q_stage=v_q_stage,
        x_d_prime=x_dp, x_q=params.x_q,
        spn_a1=psi_spn_start - spn_inf, spn_inf=spn_inf,
        repeated_root=repeated)


def analytic_flux(coeffs: FluxCoefficients, t):
    """psi'_d at time t (seconds past the stage boundary)."""
    t = np.asarray(t, dtype=float)
    out = (coeffs.a1 + coeffs.b_secular * t) * np.exp(-t / coeffs.T_d) \
        + coeffs.a2 * np.exp(-t / coeffs.T_e) + coeffs.a3
    return out if out.ndim else float(out)


def analytic_flux_spn(coeffs: FluxCoefficients, t):
    """Spontaneous flux component at time t past the stage boundary."""
    t = np.asarray(t, dtype=float)
    out = coeffs.spn_a1 * np.exp(-t / coeffs.T_d) + coeffs.spn_inf
    return out if out.ndim else float(out)


def analytic_efd(coeffs: FluxCoefficients, t):
    """Exciter output within a stage (unclamped analytic form)."""
    t = np.asarray(t, dtype=float)
    out = coeffs.e_inf + (coeffs.efd_start - coeffs.e_inf) * np.exp(-t / coeffs.T_e)
    return out if out.ndim else float(out)


def analytic_Q(coeffs: FluxCoefficients, t):
    """(Q_spon, Q_exc, Q_g) at time t under the stage's frozen dq voltage."""
    v_d, v_q = coeffs.v_d_stage, coeffs.v_q_stage
    psi = analytic_flux(coeffs, t)
    psi_spn = analytic_flux_spn(coeffs, t)
    q_spon = v_q * (psi_spn - v_q) / coeffs.x_d_prime - v_d ** 2 / coeffs.x_q
    q_exc = v_q * (psi - psi_spn) / coeffs.x_d_prime
    return q_spon, q_exc, q_spon + q_exc


def analytic_vrc_term(coeffs: FluxCoefficients, r, delta_t):
    """Windowed-mean voltage component (R/dT) * integral of psi'_d.

    Equals R/dT * (A_1(1-e^(-dT/T_d))T_d + A_2(1-e^(-dT/T_e))T_e + A_3 dT)
    plus the secular correction in the repeated-root case.
    """
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    td, te = coeffs.T_d, coeffs.T_e
    ed = math.exp(-delta_t / td)
    integral = (coeffs.a1 * td * (1.0 - ed)
                + coeffs.a2 * te * (1.0 - math.exp(-delta_t / te))
                + coeffs.a3 * delta_t
                + coeffs.b_secular * (td * td - (td * delta_t + td * td) * ed))
    return r * integral / delta_t


# ---------------------------------------------------------------------------
# Two-stage profile over a fault scenario

@dataclass(frozen=True)
class SteppedProfile:
    scenario: FaultScenario
    t_fault: float
    T_clr: float
    gen_ids: tuple
    motor_ids: tuple
    v_0: np.ndarray            # per generator, pre-fault magnitude
    v_flt: np.ndarray
    v_clr: np.ndarray
    stage_flt: tuple           # FluxCoefficients per generator
    stage_clr: tuple
    psi_flt0: np.ndarray       # device flux entering the fault stage
    motor_psi_flt: np.ndarray  # quasi-steady motor flux during the fault
    motor_psi_clr: np.ndarray

    def gen_flux(self, j, t):
        """Piecewise flux of generator column j at absolute time t."""
        t = np.asarray(t, dtype=float)
        pre = np.full_like(t, self.stage_flt[j].psi_start)
        flt = analytic_flux(self.stage_flt[j], np.maximum(t - self.t_fault, 0.0))
        clr = analytic_flux(self.stage_clr[j], np.maximum(t - self.T_clr, 0.0))
        out = np.where(t < self.t_fault, pre, np.where(t < self.T_clr, flt, clr))
        return out if out.ndim else float(out)


def stepped_profile(case: SystemCase, pf: PowerFlowSolution, gen_inits,
                    motor_inits, scenario: FaultScenario, r_flt: RMatrix,
                    r_clr: RMatrix) -> SteppedProfile:
    """Per-generator stage voltages and flux coefficients for a scenario.

    Stage voltages come from the R superposition: V_flt = R_flt @ psi_0 with
    the pre-fault flux, V_clr = R_clr @ psi(T_clr) with the analytic flux at
    clearing. dq components use the frozen pre-fault rotor angle and bus
    voltage direction. Motor flux during a stage is approximated by the
    quasi-steady internal voltage |C(s_0) * V_bus|.
    """
    idx = case.bus_index()
    gen_rows = [idx[g.bus] for g in case.generators]

    psi0 = np.array([gi.psi_d0_prime for gi in gen_inits]
                    + [abs(mi.E_prime0) for mi in motor_inits])
    dur = scenario.T_clr - scenario.t_fault

    v_flt_bus = superpose_voltage(r_flt, psi0)      # complex, all buses
    v_flt = np.abs(v_flt_bus[gen_rows])

    # quasi-steady motor flux at the fault-stage voltage
    motor_psi_flt = np.empty(len(motor_inits))
    for k, mi in enumerate(motor_inits):
        m = case.motor_for_bus(mi.bus)
        co = motor_coefficients(m, case.f0, mi.s0)
        motor_psi_flt[k] = abs(complex(co.C_R, co.C_I)) * abs(
            v_flt_bus[idx[mi.bus]])

    stage_flt = []
    for j, (g, gi) in enumerate(zip(case.generators, gen_inits)):
        v = v_flt_bus[gen_rows[j]]
        v_d, v_q = xy_to_dq(v.real, v.imag, gi.delta)
        stage_flt.append(flux_coefficients(
            g, v_0=gi.V_ref, v_stage=v_flt[j], v_q_stage=v_q,
            psi_start=gi.psi_d0_prime, efd_start=gi.E_fd0, e_fd0=gi.E_fd0,
            v_d_stage=v_d))

    psi_clr = np.array([analytic_flux(c, dur) for c in stage_flt]
                       + list(motor_psi_flt))
    v_clr_bus = superpose_voltage(r_clr, psi_clr)
    v_clr = np.abs(v_clr_bus[gen_rows])

    motor_psi_clr = np.empty(len(motor_inits))
    for k, mi in enumerate(motor_inits):
        m = case.motor_for_bus(mi.bus)
        co = motor_coefficients(m, case.f0, mi.s0)
        motor_psi_clr[k] = abs(complex(co.C_R, co.C_I)) * abs(
            v_clr_bus[idx[mi.bus]])

    stage_clr = []
    for j, (g, gi) in enumerate(zip(case.generators, gen_inits)):
        v = v_clr_bus[gen_rows[j]]
        v_d, v_q = xy_to_dq(v.real, v.imag, gi.delta)
        stage_clr.append(flux_coefficients(
            g, v_0=gi.V_ref, v_stage=v_clr[j], v_q_stage=v_q,
            psi_start=psi_clr[j],
            efd_start=float(analytic_efd(stage_flt[j], dur)),
            e_fd0=gi.E_fd0,
            psi_spn_start=float(analytic_flux_spn(stage_flt[j], dur)),
            v_d_stage=v_d))

    return SteppedProfile(
        scenario=scenario, t_fault=scenario.t_fault, T_clr=scenario.T_clr,
        gen_ids=tuple(g.bus for g in case.generators),
        motor_ids=tuple(mi.bus for mi in motor_inits),
        v_0=np.array([gi.V_ref for gi in gen_inits]),
        v_flt=v_flt, v_clr=v_clr,
        stage_flt=tuple(stage_flt), stage_clr=tuple(stage_clr),
        psi_flt0=psi0, motor_psi_flt=motor_psi_flt,
        motor_psi_clr=motor_psi_clr)


def compare_with_simulation(profile: SteppedProfile, traj, window=0.4):
    """Analytic-vs-simulated flux error report per generator.

    Returns a dict with max/mean relative errors during the fault stage and
    over ``window`` seconds after clearing.
    """
    t = traj.t
    report = {"generators": {}, "window": window}
    in_flt = (t >= profile.t_fault - 1e-12) & (t <= profile.T_clr + 1e-12)
    in_rec = (t >= profile.T_clr - 1e-12) & (t <= profile.T_clr + window + 1e-12)
    for j, gid in enumerate(profile.gen_ids):
        psi_sim = traj.psi[:, j]
        psi_ana = profile.gen_flux(j, t)
        rel = np.abs(psi_ana - psi_sim) / np.maximum(np.abs(psi_sim), 1e-9)
        report["generators"][str(gid)] = {
            "max_err_fault": float(rel[in_flt].max()),
            "mean_err_fault": float(rel[in_flt].mean()),
            "max_err_recovery": float(rel[in_rec].max()),
            "mean_err_recovery": float(rel[in_rec].mean()),
        }
    gmax = report["generators"].values()
    report["max_err_fault"] = max(g["max_err_fault"] for g in gmax)
    report["max_err_recovery"] = max(g["max_err_recovery"] for g in gmax)
    return report
