"""Newton-Raphson AC power flow and dynamic-state initialization."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from stvs.caseio import SystemCase
from stvs.models import motor_input_impedance, motor_reactances, xy_to_dq

SLIP_FLOOR = 1e-4


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class PowerFlowSolution:
    V: np.ndarray              # complex bus voltages, case bus order
    gen_P: np.ndarray          # per generator, case.generators order (pu)
    gen_Q: np.ndarray
    mismatch: float
    iterations: int
    pv_to_pq: tuple            # bus ids converted at Q_max


@dataclass(frozen=True)
class GeneratorInit:
    bus: int
    delta: float
    omega: float
    E_q0: float
    E_fd0: float
    psi_d0_prime: float
    V_ref: float
    P_m: float                 # mechanical power for the swing equation
    V_g0: float


@dataclass(frozen=True)
class MotorInit:
    bus: int
    s0: float
    E_prime0: complex
    P_m: float
    Q_m0: float
    t_load0: float             # torque scale of T_mech = t_load0*(1-s)^k


def build_ybus(case: SystemCase, shunts=True):
    """Complex bus admittance matrix from branches and switched shunts."""
    idx = case.bus_index()
    n = len(case.buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if not br.status:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 1j * br.b / 2.0
        Y[f, f] += ys + ysh
        Y[t, t] += ys + ysh
        Y[f, t] -= ys
        Y[t, f] -= ys
    if shunts:
        for s in case.shunts:
            if s.status:
                Y[idx[s.bus], idx[s.bus]] += 1j * s.b
    return Y


def solve_power_flow(case: SystemCase, tol=1e-8, max_iter=50) -> PowerFlowSolution:
    """Full Newton power flow in polar coordinates with Q-limit switching.

    PV buses hold their setpoint unless the generator Q_max binds; a binding
    bus is converted to PQ at Q_max and the case is re-solved (no hysteresis).
    """
    idx = case.bus_index()
    n = len(case.buses)
    gen_at = {g.bus: g for g in case.generators}

    p_spec = np.zeros(n)
    q_load = np.zeros(n)
    kind = np.empty(n, dtype=object)
    v_set = np.ones(n)
    for i, b in enumerate(case.buses):
        kind[i] = b.kind
        p_spec[i] -= b.P_load
        q_load[i] = b.Q_load
        if b.V_set is not None:
            v_set[i] = b.V_set
    for g in case.generators:
        if not g.is_condenser:
            p_spec[idx[g.bus]] += g.P_g0

    Y = build_ybus(case)
    forced_pq = {}   # bus index -> Q_g clamp
    total_iters = 0

    for _switch_round in range(len(case.generators) + 1):
        vm = v_set.copy()
        va = np.zeros(n)
        slack = [i for i in range(n) if kind[i] == "slack"]
        pv = [i for i in range(n) if kind[i] == "PV" and i not in forced_pq]
        pq = [i for i in range(n) if kind[i] == "PQ" or i in forced_pq]
        for i in pq:
            if kind[i] != "PQ":
                vm[i] = v_set[i]  # start from the setpoint
            else:
                vm[i] = 1.0

        q_spec = -q_load.copy()
        for i, qg in forced_pq.items():
            q_spec[i] += qg

        ang_idx = pv + pq
        mag_idx = pq

        converged = False
        for it in range(max_iter):
            V = vm * np.exp(1j * va)
            S = V * np.conj(Y @ V)
            dP = p_spec[ang_idx] - S.real[ang_idx]
            dQ = q_spec[mag_idx] - S.imag[mag_idx]
            mis = np.concatenate([dP, dQ])
            norm = np.max(np.abs(mis)) if len(mis) else 0.0
            total_iters = it
            if norm <= tol:
                converged = True
                break
            J = _jacobian(Y, V, ang_idx, mag_idx)
            try:
                dx = np.linalg.solve(J, mis)
            except np.linalg.LinAlgError as exc:
                raise PowerFlowError(f"singular Jacobian: {exc}") from exc
            va[ang_idx] += dx[: len(ang_idx)]
            vm[mag_idx] += dx[len(ang_idx):]

        if not converged:
            raise PowerFlowError(
                f"power flow did not converge in {max_iter} iterations "
                f"(final mismatch {norm:.3e})")

        V = vm * np.exp(1j * va)
        S = V * np.conj(Y @ V)
        # generator outputs: injection plus local load
        violations = {}
        for g in case.generators:
            i = idx[g.bus]
            if kind[i] == "PV" and i not in forced_pq:
                qg = S.imag[i] + q_load[i]
                if qg > g.Q_max + 1e-12:
                    violations[i] = g.Q_max
        if not violations:
            gen_P = np.empty(len(case.generators))
            gen_Q = np.empty(len(case.generators))
            for k, g in enumerate(case.generators):
                i = idx[g.bus]
                if kind[i] == "slack":
                    gen_P[k] = S.real[i] + case.buses[i].P_load
                elif g.is_condenser:
                    gen_P[k] = 0.0
                else:
                    gen_P[k] = g.P_g0
                gen_Q[k] = S.imag[i] + q_load[i]
            return PowerFlowSolution(
                V=V, gen_P=gen_P, gen_Q=gen_Q, mismatch=float(norm),
                iterations=total_iters,
                pv_to_pq=tuple(case.buses[i].id for i in sorted(forced_pq)))
        forced_pq.update(violations)

    raise PowerFlowError("PV/PQ switching did not settle")


def _jacobian(Y, V, ang_idx, mag_idx):
    """Polar power-flow Jacobian for the reduced unknown set."""
    n = len(V)
    Ibus = Y @ V
    diagV = np.diag(V)
    diagI = np.diag(Ibus)
    diagVnorm = np.diag(V / np.abs(V))
    dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
    dS_dVm = diagVnorm @ np.conj(diagI) + diagV @ np.conj(Y @ diagVnorm)
    J11 = dS_dVa.real[np.ix_(ang_idx, ang_idx)]
    J12 = dS_dVm.real[np.ix_(ang_idx, mag_idx)]
    J21 = dS_dVa.imag[np.ix_(mag_idx, ang_idx)]
    J22 = dS_dVm.imag[np.ix_(mag_idx, mag_idx)]
    return np.block([[J11, J12], [J21, J22]])


def initial_flux(p_g0, q_g0, v_g0, x_q, x_d_prime):
    """Initial d-axis transient flux from the steady-state operating point.

    psi'_d0 = [V(V^2 + Q x_q) + (P^2 x_q + V^2 Q + Q^2 x_q) x'_d / V]
              / sqrt((P x_q)^2 + (V^2 + Q x_q)^2)
    """
    if v_g0 <= 0:
        raise ValueError("terminal voltage must be positive")
    num = (v_g0 * (v_g0 ** 2 + q_g0 * x_q)
           + (p_g0 ** 2 * x_q + v_g0 ** 2 * q_g0 + q_g0 ** 2 * x_q) * x_d_prime / v_g0)
    den = math.hypot(p_g0 * x_q, v_g0 ** 2 + q_g0 * x_q)
    return num / den


def _init_generator(g, v_term, p_g, q_g):
    """Rotor angle and initial states via the classical x_q phasor method."""
    v = abs(v_term)
    i_term = np.conj((p_g + 1j * q_g) / v_term)
    e_qphasor = v_term + 1j * g.x_q * i_term
    delta = cmath.phase(e_qphasor)
    v_d, v_q = xy_to_dq(v_term.real, v_term.imag, delta)
    i_d, i_q = xy_to_dq(i_term.real, i_term.imag, delta)
    psi0 = v_q + g.x_d_prime * i_d
    psi0_eq5 = initial_flux(p_g, q_g, v, g.x_q, g.x_d_prime)
    if abs(psi0 - psi0_eq5) > 1e-10 * max(1.0, abs(psi0)):
        raise AssertionError(
            f"flux cross-check failed at bus {g.bus}: dq projection {psi0} "
            f"vs closed form {psi0_eq5}")
    e_q0 = v_q + g.x_d * i_d
    return GeneratorInit(bus=g.bus, delta=delta, omega=1.0, E_q0=e_q0,
                         E_fd0=e_q0, psi_d0_prime=psi0, V_ref=v,
                         P_m=p_g, V_g0=v)


def _motor_input_power(m, f0, s, v):
    z = motor_input_impedance(m, f0, s)
    return v * v * (z.real / abs(z) ** 2)


def _init_motor(m, f0, v_term, p_m) -> MotorInit:
    """Steady-state slip from the torque/power balance at the bus voltage."""
    _, x_prime, _ = motor_reactances(m, f0)
    v = abs(v_term)
    if p_m <= _motor_input_power(m, f0, SLIP_FLOOR, v):
        s0 = SLIP_FLOOR
    else:
        # stable root lies below the peak of the power-slip curve
        grid = np.linspace(SLIP_FLOOR, 1.0 - 1e-6, 400)
        pw = np.array([_motor_input_power(m, f0, s, v) for s in grid])
        k_peak = int(np.argmax(pw))
        if p_m > pw[k_peak]:
            raise PowerFlowError(
                f"motor at bus {m.bus} stalls at initialization: demanded "
                f"{p_m:.4g} pu exceeds peak {pw[k_peak]:.4g} pu at V={v:.3f}")
        s0 = brentq(lambda s: _motor_input_power(m, f0, s, v) - p_m,
                    SLIP_FLOOR, grid[k_peak], xtol=1e-14)
    z = motor_input_impedance(m, f0, s0)
    i = v_term / z
    e_prime0 = v_term - 1j * x_prime * i
    q_m0 = (v_term * np.conj(i)).imag
    t_e0 = (e_prime0 * np.conj(i)).real
    t_load0 = t_e0 / (1.0 - s0) ** m.load_torque_exponent if t_e0 > 0 else 0.0
    return MotorInit(bus=m.bus, s0=s0, E_prime0=complex(e_prime0),
                     P_m=p_m, Q_m0=q_m0, t_load0=t_load0)


def init_dynamics(case: SystemCase, pf: PowerFlowSolution):
    """Initialize all generator and motor states from a converged power flow.

    Returns (list[GeneratorInit], list[MotorInit]); the result satisfies the
    flat-start property (all state derivatives zero at t=0).
    """
    idx = case.bus_index()
    gens = []
    for k, g in enumerate(case.generators):
        v_term = pf.V[idx[g.bus]]
        if pf.gen_Q[k] > g.Q_max + 1e-9:
            raise PowerFlowError(
                f"generator at bus {g.bus} initialized beyond Q_max "
                f"({pf.gen_Q[k]:.4g} > {g.Q_max:.4g})")
        gens.append(_init_generator(g, v_term, pf.gen_P[k], pf.gen_Q[k]))

    motors = []
    for bus_id in case.motor_buses():
        b = case.buses[idx[bus_id]]
        m = case.motor_for_bus(bus_id)
        p_m = b.motor_share * b.P_load
        motors.append(_init_motor(m, case.f0, pf.V[idx[bus_id]], p_m))
    return gens, motors
