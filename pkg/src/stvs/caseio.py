"""Case, operating-point and scenario I/O with validation.

All electrical quantities are stored in per-unit on the system MVA base.
The case schema is plain JSON with top-level keys
``base_mva, f0, buses[], branches[], generators[], motors[], shunts[]``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional


class CaseParseError(ValueError):
    """Raised when a case/scenario file cannot be parsed."""


class CaseValidationError(ValueError):
    """Raised when a parsed structure violates an invariant.

    ``path`` identifies the offending field, e.g. ``buses[3].motor_share``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = "PQ"  # slack | PV | PQ
    V_set: Optional[float] = None  # pu, PV/slack only
    P_load: float = 0.0
    Q_load: float = 0.0
    motor_share: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    status: bool = True
    name: Optional[str] = None


@dataclass(frozen=True)
class GeneratorParams:
    bus: int
    x_d: float
    x_d_prime: float
    x_q: float
    x_ad: float
    x_f: float
    T_d0_prime: float
    K_A: float
    T_e: float
    Q_max: float
    P_g0: float = 0.0  # active dispatch, pu (ignored for slack/condenser)
    is_condenser: bool = False
    # Swing-equation data; only used when rotor-angle dynamics are enabled.
    H: float = 6.0
    D: float = 0.0
    E_fd_max: float = 5.0

    @property
    def T_d_prime(self):
        """Short-circuit transient time constant T'_d = T'_d0 * x'_d / x_d."""
        return self.T_d0_prime * self.x_d_prime / self.x_d


@dataclass(frozen=True)
class MotorParams:
    bus: int
    X_1: float
    X_2: float
    R_2: float
    T_0_prime: float
    H_m: float
    load_torque_exponent: float = 2.0


@dataclass(frozen=True)
class Shunt:
    bus: int
    b: float  # susceptance, pu (positive = capacitive)
    status: bool = True


# Composite industrial motor used for buses with motor_share > 0 but no
# explicit MotorParams. X_mu = 2*pi*60*0.414*0.02 - 0.12 ~ 3.0 at 60 Hz.
DEFAULT_MOTOR = dict(X_1=0.1, X_2=0.12, R_2=0.02, T_0_prime=0.414,
                     H_m=0.7, load_torque_exponent=2.0)


@dataclass(frozen=True)
class SystemCase:
    base_mva: float
    f0: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[GeneratorParams, ...]
    motors: tuple[MotorParams, ...] = ()
    shunts: tuple[Shunt, ...] = ()

    def bus_index(self):
        """Map bus id -> position in self.buses."""
        return {b.id: i for i, b in enumerate(self.buses)}

    def slack_bus(self):
        return next(b for b in self.buses if b.kind == "slack")

    def motor_for_bus(self, bus_id):
        """Explicit MotorParams for a bus, or the composite default."""
        for m in self.motors:
            if m.bus == bus_id:
                return m
        return MotorParams(bus=bus_id, **DEFAULT_MOTOR)

    def motor_buses(self):
        """Bus ids carrying an induction motor (motor_share > 0)."""
        return [b.id for b in self.buses if b.motor_share > 0 and b.P_load > 0]


@dataclass(frozen=True)
class OperatingPoint:
    """Overrides applied on top of a case: setpoints, shunt statuses, loads."""
    gen_v_set: dict = field(default_factory=dict)     # bus id -> V_g0
    gen_p_set: dict = field(default_factory=dict)     # bus id -> P_g0
    shunt_status: dict = field(default_factory=dict)  # shunt index -> bool
    load_scale: dict = field(default_factory=dict)    # bus id -> scale >= 0
    motor_share: dict = field(default_factory=dict)   # bus id -> share in [0,1]


@dataclass(frozen=True)
class FaultScenario:
    id: str
    fault_bus: int
    trip_branch: int           # index into case.branches
    t_fault: float = 0.1
    T_clr: float = 0.2
    fault_admittance: float = 1e4  # applied as -1j*magnitude at fault_bus
    V_th1: float = 0.75
    V_th2: float = 0.85
    delta_T: float = 0.4
    checkpoint: float = 0.4    # recovery deadline after clearing, s
    monitor_bus: Optional[int] = None

    def monitored_bus(self):
        return self.fault_bus if self.monitor_bus is None else self.monitor_bus


def _require(cond, path, message):
    if not cond:
        raise CaseValidationError(path, message)


def validate_case(case: SystemCase) -> SystemCase:
    """Check every type invariant; raise CaseValidationError on the first hit."""
    _require(case.base_mva > 0, "base_mva", "must be positive")
    _require(case.f0 > 0, "f0", "must be positive")

    seen = set()
    for i, b in enumerate(case.buses):
        p = f"buses[{i}]"
        _require(b.id not in seen, p + ".id", f"duplicate bus id {b.id}")
        seen.add(b.id)
        _require(b.kind in ("slack", "PV", "PQ"), p + ".kind",
                 f"unknown kind {b.kind!r}")
        _require(0.0 <= b.motor_share <= 1.0, p + ".motor_share",
                 "must lie in [0, 1]")
        if b.kind in ("slack", "PV"):
            _require(b.V_set is not None, p + ".V_set",
                     f"{b.kind} bus requires a voltage setpoint")
            _require(0.8 < b.V_set < 1.2, p + ".V_set",
                     "must lie in (0.8, 1.2)")

    n_slack = sum(1 for b in case.buses if b.kind == "slack")
    _require(n_slack == 1, "buses", f"exactly one slack bus required, found {n_slack}")

    for i, br in enumerate(case.branches):
        p = f"branches[{i}]"
        _require(br.from_bus in seen, p + ".from_bus", f"unknown bus {br.from_bus}")
        _require(br.to_bus in seen, p + ".to_bus", f"unknown bus {br.to_bus}")
        _require(br.x != 0, p + ".x", "reactance must be nonzero")

    gen_buses = set()
    for i, g in enumerate(case.generators):
        p = f"generators[{i}]"
        _require(g.bus in seen, p + ".bus", f"unknown bus {g.bus}")
        _require(g.bus not in gen_buses, p + ".bus", f"duplicate generator at bus {g.bus}")
        gen_buses.add(g.bus)
        _require(g.x_d_prime > 0, p + ".x_d_prime", "must be positive")
        _require(g.x_d >= g.x_d_prime, p + ".x_d", "x_d must be >= x_d_prime")
        _require(g.x_q > 0, p + ".x_q", "must be positive")
        _require(g.T_d0_prime > 0, p + ".T_d0_prime", "must be positive")
        _require(g.T_e > 0, p + ".T_e", "must be positive")
        _require(g.K_A >= 0, p + ".K_A", "must be nonnegative")
        _require(g.x_ad > 0 and g.x_f > 0, p + ".x_ad", "x_ad, x_f must be positive")

    for i, m in enumerate(case.motors):
        p = f"motors[{i}]"
        _require(m.bus in seen, p + ".bus", f"unknown bus {m.bus}")
        _require(m.X_1 > 0 and m.X_2 > 0 and m.R_2 > 0, p,
                 "X_1, X_2, R_2 must be positive")
        x_mu = 2 * math.pi * case.f0 * m.T_0_prime * m.R_2 - m.X_2
        _require(x_mu > 0, p + ".T_0_prime",
                 f"inconsistent rotor data: X_mu = {x_mu:.4g} <= 0")
        _require(m.H_m > 0, p + ".H_m", "must be positive")

    for i, s in enumerate(case.shunts):
        _require(s.bus in seen, f"shunts[{i}].bus", f"unknown bus {s.bus}")

    return case


# ---------------------------------------------------------------------------
# JSON serialization

def _case_from_dict(d) -> SystemCase:
    try:
        buses = tuple(Bus(**b) for b in d.get("buses", []))
        branches = tuple(Branch(**b) for b in d.get("branches", []))
        generators = tuple(GeneratorParams(**g) for g in d.get("generators", []))
        motors = tuple(MotorParams(**m) for m in d.get("motors", []))
        shunts = tuple(Shunt(**s) for s in d.get("shunts", []))
        case = SystemCase(base_mva=d["base_mva"], f0=d["f0"], buses=buses,
                          branches=branches, generators=generators,
                          motors=motors, shunts=shunts)
    except (KeyError, TypeError) as exc:
        raise CaseParseError(f"malformed case structure: {exc}") from exc
    return validate_case(case)


def load_case(path) -> SystemCase:
    """Load and validate a system case from a JSON file."""
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CaseParseError(f"{path}: {exc}") from exc
    return _case_from_dict(d)


def _clean(obj):
    """Dataclass -> plain dict, dropping None fields for compact files."""
    d = dataclasses.asdict(obj)
    return {k: v for k, v in d.items() if v is not None}


def save_case(case: SystemCase, path) -> None:
    d = {
        "base_mva": case.base_mva,
        "f0": case.f0,
        "buses": [_clean(b) for b in case.buses],
        "branches": [_clean(b) for b in case.branches],
        "generators": [_clean(g) for g in case.generators],
        "motors": [_clean(m) for m in case.motors],
        "shunts": [_clean(s) for s in case.shunts],
    }
    _dump_json(d, path)


def load_scenario(path) -> list[FaultScenario]:
    """Load one or many fault scenarios from a JSON file."""
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CaseParseError(f"{path}: {exc}") from exc
    items = d if isinstance(d, list) else [d]
    out = []
    for i, s in enumerate(items):
        try:
            sc = FaultScenario(**s)
        except TypeError as exc:
            raise CaseParseError(f"scenario[{i}]: {exc}") from exc
        _require(sc.T_clr > sc.t_fault, f"scenario[{i}].T_clr", "must exceed t_fault")
        _require(sc.delta_T > 0, f"scenario[{i}].delta_T", "must be positive")
        out.append(sc)
    return out


def save_scenarios(scenarios, path) -> None:
    _dump_json([_clean(s) for s in scenarios], path)


def load_operating_point(path) -> OperatingPoint:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CaseParseError(f"{path}: {exc}") from exc

    def _intkeys(m):
        return {int(k): v for k, v in m.items()}

    return OperatingPoint(
        gen_v_set=_intkeys(d.get("gen_v_set", {})),
        gen_p_set=_intkeys(d.get("gen_p_set", {})),
        shunt_status=_intkeys(d.get("shunt_status", {})),
        load_scale=_intkeys(d.get("load_scale", {})),
        motor_share=_intkeys(d.get("motor_share", {})),
    )


def save_operating_point(op: OperatingPoint, path) -> None:
    _dump_json(dataclasses.asdict(op), path)


def apply_operating_point(case: SystemCase, op: OperatingPoint) -> SystemCase:
    """Return a copy of the case with the operating point substituted.

    The input case is not modified. Unknown device references raise
    CaseValidationError.
    """
    idx = case.bus_index()
    gen_buses = {g.bus for g in case.generators}
    for b in list(op.gen_v_set) + list(op.gen_p_set):
        _require(b in gen_buses, f"op.gen[{b}]", "no generator at this bus")
    for i in op.shunt_status:
        _require(0 <= i < len(case.shunts), f"op.shunt_status[{i}]",
                 "no such shunt")
    for b in list(op.load_scale) + list(op.motor_share):
        _require(b in idx, f"op.load[{b}]", "unknown bus")
    for b, sc in op.load_scale.items():
        _require(sc >= 0, f"op.load_scale[{b}]", "must be nonnegative")
    for b, sh in op.motor_share.items():
        _require(0 <= sh <= 1, f"op.motor_share[{b}]", "must lie in [0, 1]")
    for b, v in op.gen_v_set.items():
        _require(0.8 < v < 1.2, f"op.gen_v_set[{b}]", "must lie in (0.8, 1.2)")

    buses = []
    for b in case.buses:
        kw = {}
        if b.id in op.gen_v_set and b.kind in ("PV", "slack"):
            kw["V_set"] = op.gen_v_set[b.id]
        if b.id in op.load_scale:
            kw["P_load"] = b.P_load * op.load_scale[b.id]
            kw["Q_load"] = b.Q_load * op.load_scale[b.id]
        if b.id in op.motor_share:
            kw["motor_share"] = op.motor_share[b.id]
        buses.append(replace(b, **kw) if kw else b)

    shunts = []
    for i, s in enumerate(case.shunts):
        if i in op.shunt_status:
            shunts.append(replace(s, status=bool(op.shunt_status[i])))
        else:
            shunts.append(s)

    gens = []
    for g in case.generators:
        if g.bus in op.gen_p_set and not g.is_condenser:
            gens.append(replace(g, P_g0=op.gen_p_set[g.bus]))
        else:
            gens.append(g)

    return replace(case, buses=tuple(buses), shunts=tuple(shunts),
                   generators=tuple(gens))


# ---------------------------------------------------------------------------
# Result artifacts

def _fmt(x) -> str:
    return f"{x:.15g}"


def write_trajectory(traj, path) -> None:
    """Write a trajectory as bit-stable CSV (15 significant digits)."""
    cols = ["t"]
    cols += [f"bus_{b}_Vmag" for b in traj.bus_ids]
    for g in traj.gen_ids:
        cols += [f"gen_{g}_psi", f"gen_{g}_Efd", f"gen_{g}_Q",
                 f"gen_{g}_Qspon", f"gen_{g}_Qexc"]
    cols += [f"motor_{m}_slip" for m in traj.motor_ids]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(len(traj.t)):
            row = [_fmt(traj.t[k])]
            row += [_fmt(v) for v in abs(traj.V[k])]
            for j in range(len(traj.gen_ids)):
                row += [_fmt(traj.psi[k, j]), _fmt(traj.E_fd[k, j]),
                        _fmt(traj.Q_g[k, j]), _fmt(traj.Q_spon[k, j]),
                        _fmt(traj.Q_exc[k, j])]
            row += [_fmt(s) for s in traj.slip[k]]
            fh.write(",".join(row) + "\n")


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report(report, path) -> None:
    """Persist an IndexReport or RequirementCurve (anything with to_dict)."""
    _dump_json(report.to_dict() if hasattr(report, "to_dict") else report, path)


def read_report(path):
    with open(path) as fh:
        return json.load(fh)


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
