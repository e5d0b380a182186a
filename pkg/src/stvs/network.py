"""Admittance assembly per topology stage and flux-to-voltage coefficients.

The extended network treats every dynamic device as a Norton pair: a real
2x2 admittance block at its terminal bus plus a current source proportional
to the device's scalar flux state. Inverting the extended matrix yields the
coefficients ``R_ij`` that map device flux to a voltage component on bus i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from stvs.caseio import FaultScenario, SystemCase
from stvs.models import generator_xy_admittance, motor_reactances
from stvs.powerflow import PowerFlowSolution, build_ybus

STAGE_TAGS = ("pre", "flt", "clr")


class NetworkError(RuntimeError):
    pass


@dataclass(frozen=True)
class TopologyStage:
    tag: str
    Y: np.ndarray            # complex bus admittance incl. static loads
    V0: np.ndarray           # pre-fault bus voltages (phase reference for R)
    case: SystemCase


@dataclass(frozen=True)
class DeviceBlock:
    """Norton representation of one dynamic device at its terminal bus."""
    kind: str                # "gen" | "motor"
    id: int                  # bus id (device naming follows the terminal bus)
    bus: int
    A: np.ndarray            # 2x2 real block: I_inj = A@V_xy + c*psi
    c: np.ndarray            # 2-vector source direction


@dataclass(frozen=True)
class RMatrix:
    tag: str
    R: np.ndarray            # [n_bus x n_dev]
    devices: tuple           # (kind, id) pairs, column order
    Z: np.ndarray            # extended impedance (2N x 2N), diagnostics
    w: np.ndarray            # device speeds used
    R_vec: np.ndarray = None  # [n_bus x n_dev], complex full response


def static_load_admittances(case: SystemCase, pf: PowerFlowSolution,
                            motor_inits=()):
    """Per-bus constant admittance of the static (non-motor) load part."""
    idx = case.bus_index()
    n = len(case.buses)
    y = np.zeros(n, dtype=complex)
    motor_pq = {m.bus: (m.P_m, m.Q_m0) for m in motor_inits}
    for i, b in enumerate(case.buses):
        p, q = b.P_load, b.Q_load
        if b.id in motor_pq:
            pm, qm = motor_pq[b.id]
            p, q = p - pm, q - qm
        if p or q:
            v2 = abs(pf.V[i]) ** 2
            y[i] = (p - 1j * q) / v2
    return y


def check_connectivity(case: SystemCase, skip_branch=None):
    """Verify the in-service network is a single island."""
    idx = case.bus_index()
    n = len(case.buses)
    rows, cols = [], []
    for k, br in enumerate(case.branches):
        if not br.status or k == skip_branch:
            continue
        rows.append(idx[br.from_bus])
        cols.append(idx[br.to_bus])
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp > 1:
        islanded = [case.buses[i].id for i in range(n) if labels[i] != labels[0]]
        raise NetworkError(f"network islands after branch removal: buses {islanded}")


def build_stage(case: SystemCase, scenario: FaultScenario, tag,
                pf: PowerFlowSolution, motor_inits=()) -> TopologyStage:
    """Assemble the complex Y for one stage of the fault process.

    ``flt`` adds the fault shunt -1j*fault_admittance at the faulted bus;
    ``clr`` removes the tripped branch. Static loads (net of motor demand)
    enter as constant admittance at their power-flow voltage.
    """
    if tag not in STAGE_TAGS:
        raise ValueError(f"unknown stage tag {tag!r}")
    idx = case.bus_index()
    if tag == "clr":
        if not 0 <= scenario.trip_branch < len(case.branches):
            raise NetworkError(f"no branch with index {scenario.trip_branch}")
        check_connectivity(case, skip_branch=scenario.trip_branch)
        from dataclasses import replace
        branches = list(case.branches)
        branches[scenario.trip_branch] = replace(
            branches[scenario.trip_branch], status=False)
        eff = replace(case, branches=tuple(branches))
    else:
        eff = case
    Y = build_ybus(eff)
    Y[np.arange(len(Y)), np.arange(len(Y))] += static_load_admittances(
        case, pf, motor_inits)
    if tag == "flt":
        f = idx[scenario.fault_bus]
        Y[f, f] += -1j * scenario.fault_admittance
    return TopologyStage(tag=tag, Y=Y, V0=pf.V.copy(), case=case)


def expand_real(Y):
    """Complex N x N admittance -> real 2N x 2N in interleaved x/y layout."""
    n = len(Y)
    M = np.zeros((2 * n, 2 * n))
    M[0::2, 0::2] = Y.real
    M[0::2, 1::2] = -Y.imag
    M[1::2, 0::2] = Y.imag
    M[1::2, 1::2] = Y.real
    return M


def device_blocks(case: SystemCase, gen_inits, motor_inits,
                  deltas=None) -> list[DeviceBlock]:
    """Norton blocks for all dynamic devices, fixed device order (gens then
    motors, case order)."""
    blocks = []
    if deltas is None:
        deltas = [gi.delta for gi in gen_inits]
    for g, gi, delta in zip(case.generators, gen_inits, deltas):
        A, c = generator_xy_admittance(g, delta)
        blocks.append(DeviceBlock("gen", g.bus, g.bus, A, c))
    for mi in motor_inits:
        m = case.motor_for_bus(mi.bus)
        _, x_prime, _ = motor_reactances(m, case.f0)
        y_m = 1.0 / (1j * x_prime)
        A = -np.array([[y_m.real, -y_m.imag], [y_m.imag, y_m.real]])
        phi = np.angle(mi.E_prime0)
        c = np.array([np.sin(phi) / x_prime, -np.cos(phi) / x_prime])
        blocks.append(DeviceBlock("motor", mi.bus, mi.bus, A, c))
    return blocks


def extended_matrix(stage: TopologyStage, blocks):
    """Real extended system matrix M with M @ V_xy = sum_j c_j * psi_j."""
    M = expand_real(stage.Y)
    idx = stage.case.bus_index()
    for blk in blocks:
        i = idx[blk.bus]
        M[2 * i:2 * i + 2, 2 * i:2 * i + 2] -= blk.A
    return M


def compute_R(stage: TopologyStage, blocks, w=None, projection=None,
              psi0=None) -> RMatrix:
    """Flux-to-voltage coefficient matrix for one topology stage.

    The scalar coefficients read each bus's full two-component response
    along a fixed per-bus direction (the dominant-component approximation):

    - ``projection='stage'`` (default when ``psi0`` is given) uses the
      direction of the stage-entry voltage superposed from the device
      fluxes ``psi0``, so that sum_j R_ij * psi0_j equals that voltage's
      magnitude exactly;
    - ``projection='prefault'`` (default otherwise) uses the pre-fault
      voltage phasor direction;
    - ``projection='x'`` uses the raw x-axis component.
    """
    case = stage.case
    n = len(case.buses)
    if w is None:
        w = np.ones(len(blocks))
    if projection is None:
        projection = "stage" if psi0 is not None else "prefault"
    M = extended_matrix(stage, blocks)
    try:
        Z = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise NetworkError(f"singular extended network matrix: {exc}") from exc

    idx = case.bus_index()
    R_vec = np.zeros((n, len(blocks)), dtype=complex)
    for j, blk in enumerate(blocks):
        jb = idx[blk.bus]
        v_resp = Z[:, 2 * jb:2 * jb + 2] @ blk.c          # [2n]
        R_vec[:, j] = (v_resp[0::2] + 1j * v_resp[1::2]) * w[j]

    if projection == "stage":
        if psi0 is None:
            raise ValueError("projection='stage' needs the stage-entry psi0")
        v_entry = R_vec @ np.asarray(psi0, dtype=float)
        mag = np.abs(v_entry)
        dirs = np.where(mag > 1e-12, v_entry, stage.V0)
        U = dirs / np.abs(dirs)
    elif projection == "prefault":
        U = stage.V0 / np.abs(stage.V0)
    elif projection == "x":
        U = np.ones(n, dtype=complex)
    else:
        raise ValueError(f"unknown projection {projection!r}")

    R = (np.conj(U)[:, None] * R_vec).real
    if not np.all(np.isfinite(R)):
        raise NetworkError("non-finite entries in R")
    return RMatrix(tag=stage.tag, R=R,
                   devices=tuple((b.kind, b.id) for b in blocks),
                   Z=Z, w=np.asarray(w, dtype=float), R_vec=R_vec)


def superpose_voltage(rmat: RMatrix, psi):
    """Exact complex bus voltages from the device fluxes via the stored
    full (two-component) responses."""
    return rmat.R_vec @ np.asarray(psi, dtype=float)


def electrical_distance(case: SystemCase, pf: PowerFlowSolution):
    """Pairwise impedance distance |Z_ii + Z_jj - 2 Z_ij| on the loaded
    pre-fault network."""
    Y = build_ybus(case)
    Y[np.arange(len(Y)), np.arange(len(Y))] += static_load_admittances(case, pf)
    Z = np.linalg.inv(Y)
    d = np.abs(Z.diagonal()[:, None] + Z.diagonal()[None, :] - 2 * Z)
    return d


def dump_matrix_csv(M, labels_row, labels_col, path):
    """Debug dump of Y or R with row/column labels."""
    with open(path, "w") as fh:
        fh.write("," + ",".join(str(c) for c in labels_col) + "\n")
        for lab, row in zip(labels_row, M):
            fh.write(str(lab) + "," + ",".join(f"{v:.15g}" for v in row) + "\n")
