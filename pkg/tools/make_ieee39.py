"""Build the bundled 39-bus New England replication case.

Assembles src/stvs/data/ieee39.json and the example fault-scenario files
from public listings of the 10-machine New England test system (bus/branch
data on a 100 MVA base, classic machine constants). Transformer taps are
dropped (tap control is out of scope) and exciter data uses the repo
defaults documented in the README. Run from the repo root:

    python tools/make_ieee39.py
"""

import math
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from stvs.caseio import (Branch, Bus, FaultScenario, GeneratorParams, Shunt,
                         SystemCase, save_case, save_scenarios, validate_case)

# (from, to, r, x, b) per unit on 100 MVA
LINES = [
    (1, 2, 0.0035, 0.0411, 0.6987),
    (1, 39, 0.0010, 0.0250, 0.7500),
    (2, 3, 0.0013, 0.0151, 0.2572),
    (2, 25, 0.0070, 0.0086, 0.1460),
    (3, 4, 0.0013, 0.0213, 0.2214),
    (3, 18, 0.0011, 0.0133, 0.2138),
    (4, 5, 0.0008, 0.0128, 0.1342),
    (4, 14, 0.0008, 0.0129, 0.1382),
    (5, 6, 0.0002, 0.0026, 0.0434),
    (5, 8, 0.0008, 0.0112, 0.1476),
    (6, 7, 0.0006, 0.0092, 0.1130),
    (6, 11, 0.0007, 0.0082, 0.1389),
    (7, 8, 0.0004, 0.0046, 0.0780),
    (8, 9, 0.0023, 0.0363, 0.3804),
    (9, 39, 0.0010, 0.0250, 1.2000),
    (10, 11, 0.0004, 0.0043, 0.0729),
    (10, 13, 0.0004, 0.0043, 0.0729),
    (13, 14, 0.0009, 0.0101, 0.1723),
    (14, 15, 0.0018, 0.0217, 0.3660),
    (15, 16, 0.0009, 0.0094, 0.1710),
    (16, 17, 0.0007, 0.0089, 0.1342),
    (16, 19, 0.0016, 0.0195, 0.3040),
    (16, 21, 0.0008, 0.0135, 0.2548),
    (16, 24, 0.0003, 0.0059, 0.0680),
    (17, 18, 0.0007, 0.0082, 0.1319),
    (17, 27, 0.0013, 0.0173, 0.3216),
    (21, 22, 0.0008, 0.0140, 0.2565),
    (22, 23, 0.0006, 0.0096, 0.1846),
    (23, 24, 0.0022, 0.0350, 0.3610),
    (25, 26, 0.0032, 0.0323, 0.5310),
    (26, 27, 0.0014, 0.0147, 0.2396),
    (26, 28, 0.0043, 0.0474, 0.7802),
    (26, 29, 0.0057, 0.0625, 1.0290),
    (28, 29, 0.0014, 0.0151, 0.2490),
]

# step-up and interconnection transformers, taps dropped
TRANSFORMERS = [
    (2, 30, 0.0, 0.0181),
    (6, 31, 0.0, 0.0250),
    (10, 32, 0.0, 0.0200),
    (12, 11, 0.0016, 0.0435),
    (12, 13, 0.0016, 0.0435),
    (19, 20, 0.0007, 0.0138),
    (19, 33, 0.0007, 0.0142),
    (20, 34, 0.0009, 0.0180),
    (22, 35, 0.0, 0.0143),
    (23, 36, 0.0005, 0.0272),
    (25, 37, 0.0006, 0.0232),
    (29, 38, 0.0008, 0.0156),
]

# bus: (P_load MW, Q_load MVAr)
LOADS = {
    3: (322.0, 2.4), 4: (500.0, 184.0), 7: (233.8, 84.0), 8: (522.0, 176.6),
    12: (8.5, 88.0), 15: (320.0, 153.0), 16: (329.0, 32.3), 18: (158.0, 30.0),
    20: (680.0, 103.0), 21: (274.0, 115.0), 23: (247.5, 84.6),
    24: (308.6, -92.2), 25: (224.0, 47.2), 26: (139.0, 17.0),
    27: (281.0, 75.5), 28: (206.0, 27.6), 29: (283.5, 26.9), 31: (9.2, 4.6),
    39: (1104.0, 250.0),
}

# bus: (P MW, V_set); bus 31 is the slack
DISPATCH = {
    30: (250.0, 1.0475), 31: (None, 0.9820), 32: (650.0, 0.9831),
    33: (632.0, 0.9972), 34: (508.0, 1.0123), 35: (650.0, 1.0493),
    36: (560.0, 1.0635), 37: (540.0, 1.0278), 38: (830.0, 1.0265),
    39: (1000.0, 1.0300),
}

# classic 10-machine constants on the 100 MVA system base:
# bus: (x_d, x_d', x_q, T_d0', H)
MACHINES = {
    30: (0.1000, 0.0310, 0.0690, 10.20, 42.0),
    31: (0.2950, 0.0697, 0.2820, 6.56, 30.3),
    32: (0.2495, 0.0531, 0.2370, 5.70, 35.8),
    33: (0.2620, 0.0436, 0.2580, 5.69, 28.6),
    34: (0.6700, 0.1320, 0.6200, 5.40, 26.0),
    35: (0.2540, 0.0500, 0.2410, 7.30, 34.8),
    36: (0.2950, 0.0490, 0.2920, 5.66, 26.4),
    37: (0.2900, 0.0570, 0.2800, 6.70, 24.3),
    38: (0.2106, 0.0570, 0.2050, 4.79, 34.5),
    39: (0.0200, 0.0060, 0.0190, 7.00, 500.0),
}

# repo exciter defaults; the source listings carry no exciter data
K_A, T_E, Q_MAX = 20.0, 0.5, 8.0


def build_case():
    buses = []
    for i in range(1, 40):
        p, q = LOADS.get(i, (0.0, 0.0))
        if i in DISPATCH:
            kind = "slack" if i == 31 else "PV"
            buses.append(Bus(id=i, kind=kind, V_set=DISPATCH[i][1],
                             P_load=p / 100.0, Q_load=q / 100.0))
        else:
            buses.append(Bus(id=i, kind="PQ", P_load=p / 100.0,
                             Q_load=q / 100.0))

    branches = [Branch(from_bus=f, to_bus=t, r=r, x=x, b=b, name=f"{f}-{t}")
                for f, t, r, x, b in LINES]
    branches += [Branch(from_bus=f, to_bus=t, r=r, x=x, b=0.0,
                        name=f"{f}-{t}T") for f, t, r, x in TRANSFORMERS]

    gens = []
    for bus, (x_d, x_dp, x_q, t_d0, h) in MACHINES.items():
        x_ad = 0.9 * x_d
        x_f = x_ad ** 2 / (x_d - x_dp)   # keeps psi'_d = x_ad*i_f - x_ad^2/x_f*I_d
        p = DISPATCH[bus][0]
        gens.append(GeneratorParams(
            bus=bus, x_d=x_d, x_d_prime=x_dp, x_q=x_q, x_ad=x_ad,
            x_f=x_f, T_d0_prime=t_d0, K_A=K_A, T_e=T_E, Q_max=Q_MAX,
            P_g0=0.0 if p is None else p / 100.0, H=h))

    return validate_case(SystemCase(base_mva=100.0, f0=60.0,
                                    buses=tuple(buses),
                                    branches=tuple(branches),
                                    generators=tuple(gens)))


def branch_index(case, name):
    for k, br in enumerate(case.branches):
        if br.name == name:
            return k
    raise KeyError(name)


def build_scenarios(case):
    flt_1727 = FaultScenario(
        id="flt_1727", fault_bus=17, trip_branch=branch_index(case, "17-27"),
        t_fault=0.1, T_clr=0.2, monitor_bus=15)
    # eight line-terminal faults spread over the network, 0.1 s each
    fault_lines = [("17-27", 17, 15), ("3-18", 3, 3), ("4-14", 4, 4),
                   ("16-21", 16, 16), ("26-28", 26, 26), ("5-8", 5, 5),
                   ("23-24", 23, 23), ("25-26", 25, 25)]
    faults8 = [FaultScenario(id=f"flt_{name.replace('-', '')}",
                             fault_bus=fb, trip_branch=branch_index(case, name),
                             t_fault=0.1, T_clr=0.2, monitor_bus=mon)
               for name, fb, mon in fault_lines]
    return flt_1727, faults8


def main():
    out = pathlib.Path(__file__).resolve().parents[1] / "src" / "stvs" / "data"
    out.mkdir(parents=True, exist_ok=True)
    case = build_case()
    save_case(case, out / "ieee39.json")
    flt_1727, faults8 = build_scenarios(case)
    save_scenarios([flt_1727], out / "flt_1727.json")
    save_scenarios(faults8, out / "faults8.json")
    print(f"wrote {out / 'ieee39.json'}: {len(case.buses)} buses, "
          f"{len(case.branches)} branches, {len(case.generators)} generators")


if __name__ == "__main__":
    main()
