"""Command-line surface for batch studies and plot-ready exports.

Verbs: case validate | pf run | sim run | analytic compare | index report |
assess requirements | security check | sweep points. All outputs are CSV or
JSON; plotting is external. Exit codes: 0 success, 1 validation error,
2 numerical failure, 3 I/O error; failures emit an error JSON on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from stvs import caseio
from stvs.analytic import compare_with_simulation, stepped_profile
from stvs.caseio import (CaseParseError, CaseValidationError, ensure_dir,
                         load_case, load_operating_point, load_scenario,
                         read_report, write_report, write_trajectory)
from stvs.indexes import (IndexError_, assess_requirements, check_security,
                          evaluate_operating_point, index_report,
                          requirement_table, run_sweep,
                          sample_operating_points)
from stvs.network import NetworkError, build_stage, compute_R, device_blocks
from stvs.powerflow import PowerFlowError, init_dynamics, solve_power_flow
from stvs.simulate import SimOptions, SimulationError, extract_metrics, run


def _sim_options(args):
    return SimOptions(dt=args.dt, t_end=args.t_end, integrator=args.integrator,
                      swing_enabled=not args.no_swing,
                      record_stride=args.record_stride)


def _load_inputs(args, need_scenario=True):
    case = load_case(args.case)
    op = load_operating_point(args.point) if getattr(args, "point", None) else None
    if op is not None:
        case = caseio.apply_operating_point(case, op)
    scenarios = []
    if need_scenario:
        scenarios = load_scenario(args.scenario)
        if getattr(args, "fault_id", None):
            scenarios = [s for s in scenarios if s.id == args.fault_id]
            if not scenarios:
                raise CaseValidationError(args.scenario,
                                          f"no scenario with id {args.fault_id!r}")
    return case, op, scenarios


def _pipeline(case, scenario, pf=None):
    """Power flow, dynamic init, and both stage R matrices for one scenario."""
    if pf is None:
        pf = solve_power_flow(case)
    gen_inits, motor_inits = init_dynamics(case, pf)
    blocks = device_blocks(case, gen_inits, motor_inits)
    psi0 = np.array([gi.psi_d0_prime for gi in gen_inits]
                    + [abs(mi.E_prime0) for mi in motor_inits])
    r_flt = compute_R(build_stage(case, scenario, "flt", pf, motor_inits),
                      blocks, psi0=psi0)
    r_clr = compute_R(build_stage(case, scenario, "clr", pf, motor_inits),
                      blocks, psi0=psi0)
    return pf, gen_inits, motor_inits, r_flt, r_clr


def _emit(obj, args, default_name):
    if getattr(args, "out", None):
        ensure_dir(args.out)
        path = os.path.join(args.out, default_name)
        write_report(obj, path)
        print(path)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))


def _rows_to_csv(rows, header, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# Command handlers

def cmd_case_validate(args):
    case = load_case(args.case)
    print(json.dumps({
        "case": args.case, "valid": True,
        "buses": len(case.buses), "branches": len(case.branches),
        "generators": len(case.generators),
        "motor_buses": len(case.motor_buses()),
        "shunts": len(case.shunts),
    }, indent=2))
    return 0


def cmd_pf_run(args):
    case, _, _ = _load_inputs(args, need_scenario=False)
    pf = solve_power_flow(case)
    rows = [(b.id, b.kind, f"{abs(pf.V[i]):.6f}",
             f"{np.degrees(np.angle(pf.V[i])):.4f}")
            for i, b in enumerate(case.buses)]
    summary = {
        "iterations": pf.iterations, "mismatch": pf.mismatch,
        "pv_to_pq": list(pf.pv_to_pq),
        "gen_P": {str(g.bus): float(p) for g, p in
                  zip(case.generators, pf.gen_P)},
        "gen_Q": {str(g.bus): float(q) for g, q in
                  zip(case.generators, pf.gen_Q)},
        "bus_voltage": {str(b.id): [abs(pf.V[i]), float(np.angle(pf.V[i]))]
                        for i, b in enumerate(case.buses)},
    }
    if args.format == "csv":
        out = args.out or "."
        ensure_dir(out)
        path = os.path.join(out, "pf_buses.csv")
        _rows_to_csv(rows, ("bus", "kind", "v_mag", "v_ang_deg"), path)
        print(path)
    else:
        _emit(summary, args, "pf.json")
    return 0


def cmd_sim_run(args):
    case, _, scenarios = _load_inputs(args)
    options = _sim_options(args)
    pf = solve_power_flow(case)
    gen_inits, motor_inits = init_dynamics(case, pf)
    out = args.out or "out"
    ensure_dir(out)
    print(f"# case={args.case} scenarios={len(scenarios)} dt={options.dt} "
          f"t_end={options.t_end} integrator={options.integrator} "
          f"swing={options.swing_enabled}")
    for scen in scenarios:
        traj = run(case, pf, gen_inits, motor_inits, scen, options)
        met = extract_metrics(traj, scen)
        tpath = os.path.join(out, f"{scen.id}_traj.csv")
        write_trajectory(traj, tpath)
        write_report({
            "scenario_id": scen.id,
            "v_nadir": {str(b): float(v) for b, v in
                        zip(met.bus_ids, met.v_nadir)},
            "v_checkpoint": {str(b): float(v) for b, v in
                             zip(met.bus_ids, met.v_checkpoint)},
            "recovery_time": {str(b): (None if np.isnan(rt) else float(rt))
                              for b, rt in zip(met.bus_ids, met.recovery_time)},
            "events": traj.events,
        }, os.path.join(out, f"{scen.id}_metrics.json"))
        print(tpath)
    return 0


def cmd_analytic_compare(args):
    case, _, scenarios = _load_inputs(args)
    options = _sim_options(args)
    out = args.out or "out"
    ensure_dir(out)
    for scen in scenarios:
        pf, gen_inits, motor_inits, r_flt, r_clr = _pipeline(case, scen)
        profile = stepped_profile(case, pf, gen_inits, motor_inits, scen,
                                  r_flt, r_clr)
        traj = run(case, pf, gen_inits, motor_inits, scen, options)
        report = compare_with_simulation(profile, traj, window=scen.delta_T)
        report["scenario_id"] = scen.id
        report["v_flt"] = dict(zip(map(str, profile.gen_ids),
                                   profile.v_flt.tolist()))
        report["v_clr"] = dict(zip(map(str, profile.gen_ids),
                                   profile.v_clr.tolist()))
        path = os.path.join(out, f"{scen.id}_analytic.json")
        write_report(report, path)
        print(path)
    return 0


def cmd_index_report(args):
    case, _, scenarios = _load_inputs(args)
    out = args.out or "out"
    ensure_dir(out)
    for scen in scenarios:
        pf, gen_inits, motor_inits, r_flt, r_clr = _pipeline(case, scen)
        psi0 = np.array([gi.psi_d0_prime for gi in gen_inits]
                        + [abs(mi.E_prime0) for mi in motor_inits])
        if args.method == "analytic":
            source = stepped_profile(case, pf, gen_inits, motor_inits, scen,
                                     r_flt, r_clr)
        else:
            source = run(case, pf, gen_inits, motor_inits, scen,
                         _sim_options(args))
        rep = index_report(case, scen, r_flt, r_clr, psi0, source, args.method)
        path = os.path.join(out, f"{scen.id}_indexes.json")
        write_report(rep.to_dict(), path)
        print(path)
    return 0


def cmd_assess_requirements(args):
    case, _, scenarios = _load_inputs(args)
    out = args.out or "out"
    ensure_dir(out)
    curves = []
    for scen in scenarios:
        curve = assess_requirements(case, scen, n_samples=args.samples,
                                    seed=args.seed,
                                    zone_radius=args.zone_radius,
                                    options=_sim_options(args),
                                    jobs=args.jobs)
        curves.append(curve)
        path = os.path.join(out, f"{scen.id}_curve.json")
        write_report(curve.to_dict(), path)
        print(path)
    rpath = os.path.join(out, "requirements.json")
    write_report(requirement_table(curves), rpath)
    print(rpath)
    return 0


def cmd_security_check(args):
    case = load_case(args.case)
    op = load_operating_point(args.point) if args.point else None
    faults = load_scenario(args.scenario)
    requirements = read_report(args.requirements)
    verdict = check_security(case, op, faults, requirements)
    _emit(verdict, args, "security.json")
    return 0


def cmd_sweep_points(args):
    case, _, scenarios = _load_inputs(args)
    out = args.out or "out"
    ensure_dir(out)
    for scen in scenarios:
        ops = sample_operating_points(case, scen, args.samples,
                                      seed=args.seed,
                                      zone_radius=args.zone_radius)
        results = run_sweep(case, scen, ops, options=_sim_options(args),
                            jobs=args.jobs)
        rows = [(k, r.vic, r.vrc, r.v_nadir, r.v_checkpoint, int(r.converged))
                for k, r in enumerate(results)]
        if args.format == "json":
            path = os.path.join(out, f"{scen.id}_sweep.json")
            write_report([{"sample": k, "vic": v, "vrc": w, "v_nadir": n,
                           "v_checkpoint": c, "converged": bool(g)}
                          for k, v, w, n, c, g in rows], path)
        else:
            path = os.path.join(out, f"{scen.id}_sweep.csv")
            _rows_to_csv(rows, ("sample", "vic", "vrc", "v_nadir",
                                "v_checkpoint", "converged"), path)
        print(path)
    return 0


# ---------------------------------------------------------------------------
# Parser

def _add_sim_flags(p):
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--t-end", type=float, default=3.0, dest="t_end")
    p.add_argument("--integrator", choices=("rk4", "trapezoidal"),
                   default="rk4")
    p.add_argument("--record-stride", type=int, default=1, dest="record_stride")
    p.add_argument("--no-swing", action="store_true", dest="no_swing")


def _add_common(p, scenario=True, point=True, sim=False, sweep=False):
    p.add_argument("--case", required=True, help="system case JSON")
    if scenario:
        p.add_argument("--scenario", required=True,
                       help="fault scenario JSON (one or many)")
        p.add_argument("--fault-id", help="restrict to one scenario id")
    if point:
        p.add_argument("--point", help="operating-point overrides JSON")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    if sim:
        _add_sim_flags(p)
    if sweep:
        p.add_argument("--samples", type=int, default=40)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        p.add_argument("--zone-radius", type=float, default=float("inf"),
                       dest="zone_radius",
                       help="electrical-distance radius of the fault zone")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="stvs",
        description="Short-term voltage-stability indexes and requirements")
    top = ap.add_subparsers(dest="group", required=True)

    def verb(group, name, handler, **kw):
        g = top.add_parser(group) if group not in verb.groups else verb.groups[group]
        verb.groups[group] = g
        if not hasattr(g, "_verbs"):
            g._verbs = g.add_subparsers(dest="verb", required=True)
        p = g._verbs.add_parser(name)
        p.set_defaults(handler=handler)
        return p

    verb.groups = {}

    p = verb("case", "validate", cmd_case_validate)
    p.add_argument("case", help="system case JSON")

    _add_common(verb("pf", "run", cmd_pf_run), scenario=False)
    _add_common(verb("sim", "run", cmd_sim_run), sim=True)
    _add_common(verb("analytic", "compare", cmd_analytic_compare), sim=True)
    p = _add_common(verb("index", "report", cmd_index_report), sim=True)
    verb.groups["index"]._verbs.choices["report"].add_argument(
        "--method", choices=("analytic", "simulated"), default="simulated")
    _add_common(verb("assess", "requirements", cmd_assess_requirements),
                point=False, sim=True, sweep=True)
    p = verb("security", "check", cmd_security_check)
    p.add_argument("--case", required=True)
    p.add_argument("--point", help="operating-point overrides JSON")
    p.add_argument("--scenario", required=True, help="fault set JSON")
    p.add_argument("--requirements", required=True,
                   help="requirement table JSON")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    _add_common(verb("sweep", "points", cmd_sweep_points),
                point=False, sim=True, sweep=True)
    return ap


def _fail(code, exc):
    json.dump({"error": {"type": type(exc).__name__, "message": str(exc)}},
              sys.stderr, indent=2)
    sys.stderr.write("\n")
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (CaseParseError, CaseValidationError) as exc:
        return _fail(1, exc)
    except (PowerFlowError, SimulationError, NetworkError, IndexError_,
            np.linalg.LinAlgError, ValueError) as exc:
        return _fail(2, exc)
    except OSError as exc:
        return _fail(3, exc)


if __name__ == "__main__":
    sys.exit(main())
