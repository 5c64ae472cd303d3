"""Regenerates src/tsco/data/ieee30_cpn.json.

Topology and reactances follow the standard 30-bus, 41-line test network;
thermal units sit at the classic generator buses 1, 2, 13, 22, 23, 27.  The
additions (two brown units with cheap fuel but high emission rates, four gas
units, 3 solar + 2 wind sites, 4 BESS units, 5 CPN host buses) and all cost,
ramp, and limit numbers are this repo's fixture choices; see README.
"""

import json
import os

import numpy as np

# from, to, x (p.u.); susceptance = 1/x
LINES = [
    (1, 2, 0.0575), (1, 3, 0.1652), (2, 4, 0.1737), (3, 4, 0.0379),
    (2, 5, 0.1983), (2, 6, 0.1763), (4, 6, 0.0414), (5, 7, 0.1160),
    (6, 7, 0.0820), (6, 8, 0.0420), (6, 9, 0.2080), (6, 10, 0.5560),
    (9, 11, 0.2080), (9, 10, 0.1100), (4, 12, 0.2560), (12, 13, 0.1400),
    (12, 14, 0.2559), (12, 15, 0.1304), (12, 16, 0.1987), (14, 15, 0.1997),
    (16, 17, 0.1923), (15, 18, 0.2185), (18, 19, 0.1292), (19, 20, 0.0680),
    (10, 20, 0.2090), (10, 17, 0.0845), (10, 21, 0.0749), (10, 22, 0.1499),
    (21, 22, 0.0236), (15, 23, 0.2020), (22, 24, 0.1790), (23, 24, 0.2700),
    (24, 25, 0.3292), (25, 26, 0.3800), (25, 27, 0.2087), (28, 27, 0.3960),
    (27, 29, 0.4153), (27, 30, 0.6027), (29, 30, 0.4533), (8, 28, 0.2000),
    (6, 28, 0.0599),
]

# classic 30-bus load pattern (MW at peak), scaled up for the larger fleet
PEAK_LOAD = {
    2: 21.7, 3: 2.4, 4: 7.6, 5: 94.2, 7: 22.8, 8: 30.0, 10: 5.8, 12: 11.2,
    14: 6.2, 15: 8.2, 16: 3.5, 17: 9.0, 18: 3.2, 19: 9.5, 20: 2.2, 21: 17.5,
    23: 3.2, 24: 8.7, 26: 3.5, 29: 2.4, 30: 10.6,
}
LOAD_SCALE = 1.25

# diurnal shape (fraction of peak per hour, 24 entries, evening peak)
SHAPE = [0.62, 0.58, 0.56, 0.55, 0.56, 0.60, 0.68, 0.78, 0.86, 0.91, 0.94,
         0.96, 0.95, 0.93, 0.92, 0.93, 0.95, 0.98, 1.00, 0.99, 0.95, 0.87,
         0.76, 0.67]

THERMAL = [
    # id, bus, a, b, c, pmin, pmax, ru, rd, su, sd, minup, mindown, eps, on0, p0
    ("coal1", 1, 0.010, 19.0, 220.0, 60.0, 200.0, 65.0, 65.0, 900.0, 420.0, 4, 4, 0.95, True, 120.0),
    ("coal2", 2, 0.012, 21.0, 160.0, 40.0, 140.0, 55.0, 55.0, 650.0, 320.0, 4, 4, 0.90, True, 80.0),
    ("gas_cc", 22, 0.015, 33.0, 100.0, 20.0, 120.0, 90.0, 90.0, 260.0, 130.0, 2, 2, 0.38, False, 0.0),
    ("gas_ct1", 27, 0.020, 40.0, 60.0, 10.0, 80.0, 80.0, 80.0, 120.0, 60.0, 1, 1, 0.42, False, 0.0),
    ("gas_ct2", 23, 0.030, 48.0, 45.0, 5.0, 60.0, 60.0, 60.0, 80.0, 40.0, 1, 1, 0.50, False, 0.0),
    ("oil_gt", 13, 0.040, 60.0, 35.0, 5.0, 50.0, 50.0, 50.0, 60.0, 30.0, 1, 1, 0.75, False, 0.0),
]

RES = [
    ("solar1", 10, "solar", 45.0),
    ("solar2", 24, "solar", 40.0),
    ("solar3", 5, "solar", 35.0),
    ("wind1", 7, "wind", 55.0),
    ("wind2", 15, "wind", 45.0),
]

BESS = [
    ("bess1", 5, 80.0, 0.10, 0.90, 20.0, 20.0, 0.95, 0.95, 0.50),
    ("bess2", 8, 60.0, 0.10, 0.90, 15.0, 15.0, 0.95, 0.95, 0.50),
    ("bess3", 11, 60.0, 0.10, 0.90, 15.0, 15.0, 0.95, 0.95, 0.50),
    ("bess4", 24, 40.0, 0.10, 0.90, 10.0, 10.0, 0.95, 0.95, 0.50),
]

# id, bus, FLOPS, slots, idle MW, peak MW
CPN = [
    (0, 7, 2.0e13, 16, 1.6, 8.0),
    (1, 10, 2.0e13, 12, 1.6, 8.0),
    (2, 15, 1.5e13, 16, 1.2, 6.0),
    (3, 21, 2.5e13, 20, 2.0, 10.0),
    (4, 24, 1.5e13, 16, 1.2, 6.0),
]


def main():
    buses = []
    for i in range(1, 31):
        peak = PEAK_LOAD.get(i, 0.0) * LOAD_SCALE
        buses.append({"id": i, "demand": [round(peak * s, 4) for s in SHAPE]})
    lines = [{"id": k, "from": f, "to": t,
              "susceptance": round(1.0 / x, 6), "limit_mw": limit(f, t)}
             for k, (f, t, x) in enumerate(LINES)]
    doc = {
        "reference_bus": 1,
        "carbon_price": 50.0,
        "period_hours": 1.0,
        "buses": buses,
        "lines": lines,
        "thermal": [dict(zip(
            ["id", "bus", "a", "b", "c", "p_min", "p_max", "ramp_up",
             "ramp_down", "startup_cost", "shutdown_cost", "min_up",
             "min_down", "emission_rate", "initial_on", "initial_power"], t))
            for t in THERMAL],
        "res": [dict(zip(["id", "bus", "kind", "capacity_mw"], r)) for r in RES],
        "bess": [dict(zip(
            ["id", "bus", "energy_mwh", "soc_min", "soc_max", "p_charge_max",
             "p_discharge_max", "eta_charge", "eta_discharge", "soc_initial"], b))
            for b in BESS],
        "cpn_nodes": [dict(zip(
            ["id", "bus", "compute_flops", "slots", "idle_mw", "peak_mw"], n))
            for n in CPN],
    }
    out = os.path.join(os.path.dirname(__file__), "..", "src", "tsco", "data",
                       "ieee30_cpn.json")
    os.makedirs(os.path.dirname(out), exist_ok=True)
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    print("wrote", os.path.abspath(out))


def limit(f, t):
    # trunk corridors get classic ratings; the rest are generous so that the
    # fixture runs uncongested unless renewables push hard on a corridor
    trunk = {(1, 2): 160, (1, 3): 160, (2, 4): 110, (3, 4): 160, (2, 5): 160,
             (2, 6): 110, (4, 6): 140, (5, 7): 120, (6, 7): 130, (6, 8): 65}
    return float(trunk.get((f, t), 80.0))


if __name__ == "__main__":
    main()
