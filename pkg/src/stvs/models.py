"""Dynamic device models as pure derivative/output functions.

Conventions
-----------
Network frame: synchronously rotating x-y frame; phasors are complex
``V = V_x + j*V_y``. Machine frame: rotor d-q axes with ``delta`` the angle
of the q-axis measured from the x-axis, so

    F_x + j*F_y = (F_d + j*F_q) * exp(j*(delta - pi/2))

Generator convention: stator current flows out of the machine into the
network. Motor convention: current flows into the machine.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from stvs.caseio import GeneratorParams, MotorParams


def dq_to_xy(f_d, f_q, delta):
    """Rotate machine d-q components into the network x-y frame."""
    s, c = np.sin(delta), np.cos(delta)
    return f_d * s + f_q * c, -f_d * c + f_q * s


def xy_to_dq(f_x, f_y, delta):
    s, c = np.sin(delta), np.cos(delta)
    return f_x * s - f_y * c, f_x * c + f_y * s


# ---------------------------------------------------------------------------
# Synchronous generator, third-order model + first-order exciter

def stator_algebra(psi_d_prime, v_d, v_q, params: GeneratorParams):
    """Stator currents and power from the flux and terminal dq voltage.

    I_d = (psi'_d - V_q)/x'_d, I_q = V_d/x_q (stator resistance neglected).
    """
    i_d = (psi_d_prime - v_q) / params.x_d_prime
    i_q = v_d / params.x_q
    p_g = v_d * i_d + v_q * i_q
    q_g = v_q * i_d - v_d * i_q
    return i_d, i_q, p_g, q_g


def generator_derivatives(psi_d_prime, e_fd, v_d, v_q, v_ref, e_fd0,
                          params: GeneratorParams):
    """Time derivatives of the transient flux and the exciter output.

    The exciter is first order with proportional voltage error and an
    anti-windup ceiling at ``params.E_fd_max`` (floor at 0).
    """
    i_d = (psi_d_prime - v_q) / params.x_d_prime
    e_q = psi_d_prime + (params.x_d - params.x_d_prime) * i_d
    dpsi = (e_fd - e_q) / params.T_d0_prime
    v = np.hypot(v_d, v_q)
    defd = (e_fd0 + params.K_A * (v_ref - v) - e_fd) / params.T_e
    # anti-windup: freeze at the limits instead of integrating past them
    if np.ndim(defd):
        hi = (e_fd >= params.E_fd_max) & (defd > 0)
        lo = (e_fd <= 0.0) & (defd < 0)
        defd = np.where(hi | lo, 0.0, defd)
    else:
        if (e_fd >= params.E_fd_max and defd > 0) or (e_fd <= 0.0 and defd < 0):
            defd = 0.0
    return dpsi, defd


def decompose_Q(psi_d_prime, psi_spn, v_d, v_q, params: GeneratorParams):
    """Split Q_g into the spontaneous and excitation-control var responses.

    ``psi_spn`` is the shadow flux co-integrated with the exciter frozen at
    its initial output; the remainder ``delta_psi = psi'_d - psi_spn`` carries
    the control contribution. The split satisfies Q_spon + Q_exc == Q_g.
    """
    q_spon = (v_q * (psi_spn - v_q)) / params.x_d_prime - v_d ** 2 / params.x_q
    q_exc = v_q * (psi_d_prime - psi_spn) / params.x_d_prime
    return q_spon, q_exc


def generator_xy_admittance(params: GeneratorParams, delta):
    """Real 2x2 stator admittance block and flux source vector in x-y.

    Returns (A, c) with ``I_xy = A @ V_xy + c * psi'_d`` (generator
    convention, current into the network). ``c = (sin(delta)/x'_d,
    -cos(delta)/x'_d)``; A carries the saliency terms.
    """
    s, c = math.sin(delta), math.cos(delta)
    a = 1.0 / params.x_d_prime
    b = 1.0 / params.x_q
    A = np.array([
        [(b - a) * s * c, -(b * c * c + a * s * s)],
        [b * s * s + a * c * c, (a - b) * s * c],
    ])
    src = np.array([s / params.x_d_prime, -c / params.x_d_prime])
    return A, src


def field_current(psi_d_prime, i_d, params: GeneratorParams):
    """Field current i_f = E_q / x_ad from the internal EMF."""
    e_q = psi_d_prime + (params.x_d - params.x_d_prime) * i_d
    return e_q / params.x_ad


# ---------------------------------------------------------------------------
# Induction motor, first-order transient model

@dataclass(frozen=True)
class MotorCoefficients:
    X: float
    X_prime: float
    X_mu: float
    C_R: float
    C_I: float
    K_Z: float


def motor_reactances(params: MotorParams, f0):
    """Total, transient and magnetizing reactance from the nameplate set."""
    x_mu = 2 * math.pi * f0 * params.T_0_prime * params.R_2 - params.X_2
    if x_mu <= 0:
        raise ValueError(f"inconsistent motor data: X_mu = {x_mu:.4g} <= 0")
    x = params.X_1 + x_mu
    x_prime = params.X_1 + params.X_2 * x_mu / (params.X_2 + x_mu)
    return x, x_prime, x_mu


def motor_coefficients(params: MotorParams, f0, s0, v_ld0=1.0, p_m=None):
    """Quasi-steady internal-voltage coefficient C and load factor K_Z.

    C relates the internal voltage to the terminal voltage at slip s0
    (E' = C * V); K_Z = -C_I * V_LD0^2 / (P_m * X').
    """
    x, x_prime, x_mu = motor_reactances(params, f0)
    k = (x - x_prime) / x_prime
    c = -k / (-1.0 - k - 1j * 2 * math.pi * f0 * s0 * params.T_0_prime)
    if p_m is None:
        k_z = 0.0
    elif p_m == 0:
        raise ValueError("K_Z undefined for P_m = 0")
    else:
        k_z = -c.imag * v_ld0 ** 2 / (p_m * x_prime)
    return MotorCoefficients(X=x, X_prime=x_prime, X_mu=x_mu,
                             C_R=c.real, C_I=c.imag, K_Z=k_z)


def motor_input_impedance(params: MotorParams, f0, s):
    """Steady-state input impedance of the motor equivalent circuit at slip s."""
    x, x_prime, x_mu = motor_reactances(params, f0)
    zr = params.R_2 / s + 1j * params.X_2
    return 1j * params.X_1 + 1j * x_mu * zr / (params.R_2 / s + 1j * (params.X_2 + x_mu))


def motor_electrical_torque(e_prime, v_bus, x_prime):
    """Air-gap torque (pu) from the internal voltage and terminal voltage."""
    i = (v_bus - e_prime) / (1j * x_prime)
    return (e_prime * np.conj(i)).real


def motor_derivatives(e_prime, slip, v_bus, t_load0, params: MotorParams, f0):
    """Derivatives of the complex internal voltage and the slip.

    dE'/dt = -j*w_s*s*E' - (E' - j(X - X')*I)/T'_0 with I = (V - E')/(jX')
    (current into the motor); ds/dt = (T_mech - T_elec)/(2*H_m) with
    T_mech = t_load0 * (1 - s)^k.
    """
    x, x_prime, _ = motor_reactances(params, f0)
    i = (v_bus - e_prime) / (1j * x_prime)
    w_s = 2 * math.pi * f0
    de = -1j * w_s * slip * e_prime - (e_prime - 1j * (x - x_prime) * i) / params.T_0_prime
    t_e = (e_prime * np.conj(i)).real
    t_m = t_load0 * (1.0 - slip) ** params.load_torque_exponent
    ds = (t_m - t_e) / (2.0 * params.H_m)
    return de, ds


def motor_xy_source(e_prime, x_prime):
    """Norton source current of the motor internal voltage (into the network).

    The motor draws I = (V - E')/(jX'); the network sees admittance 1/(jX')
    on the bus plus the injected source E'/(jX').
    """
    return e_prime / (1j * x_prime)
