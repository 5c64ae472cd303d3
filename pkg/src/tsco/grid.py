"""Power-system data model and LP builders.

DC power flow in per-unit on a 100 MVA base with MW at every interface.
Thermal fuel cost is quadratic in the data and piecewise-linearized (chord
slopes, convexity preserved) for the dispatch LPs.  Locational prices come
from the bus-balance duals; marginal carbon intensity from a +0.1 MW load
re-solve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from . import cpn, solver
from .solver import EQ, GE, LE, LpBuilder, LpStatus, solve_lp

BASE_MVA = 100.0
SHED_PRICE = 1e4  # $/MWh, last-resort slack in real-time dispatch


class GridError(Exception):
    pass


class InvalidSegmentCount(GridError):
    pass


class InconsistentCommitment(GridError):
    pass


class PerturbedInfeasible(GridError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    demand: np.ndarray          # MW per period, length T


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    susceptance: float          # p.u. (1/x) on BASE_MVA
    limit_mw: float


@dataclass(frozen=True)
class ThermalGen:
    id: str
    bus: int
    cost_a: float               # $/MW^2 h
    cost_b: float               # $/MWh
    cost_c: float               # $/h
    p_min: float
    p_max: float
    ramp_up: float              # MW/h
    ramp_down: float
    startup_cost: float
    shutdown_cost: float
    min_up: int                 # h
    min_down: int
    emission_rate: float        # tCO2/MWh
    initial_on: bool = False
    initial_power: float = 0.0

    def fuel_cost(self, p: float) -> float:
        return self.cost_a * p * p + self.cost_b * p + self.cost_c


@dataclass(frozen=True)
class ResGen:
    id: str
    bus: int
    kind: str                   # "wind" | "solar"
    capacity_mw: float


@dataclass(frozen=True)
class Bess:
    id: str
    bus: int
    energy_mwh: float
    soc_min: float              # fraction of energy_mwh
    soc_max: float
    p_charge_max: float
    p_discharge_max: float
    eta_charge: float
    eta_discharge: float
    soc_initial: float


@dataclass
class GridSpec:
    buses: list
    lines: list
    thermal: list
    res: list
    bess: list
    reference_bus: int
    carbon_price: float         # $/tCO2
    period_hours: float
    cpn_nodes: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.buses[0].demand)

    def bus_ids(self):
        return [b.id for b in self.buses]

    def validate(self):
        ids = self.bus_ids()
        if len(set(ids)) != len(ids):
            raise GridError("duplicate bus ids")
        idset = set(ids)
        if self.reference_bus not in idset:
            raise GridError("reference bus not in bus set")
        T = self.horizon
        for b in self.buses:
            if len(b.demand) != T:
                raise GridError(f"bus {b.id}: demand length != {T}")
            if np.any(np.asarray(b.demand) < 0):
                raise GridError(f"bus {b.id}: negative demand")
        adj = {i: set() for i in ids}
        for ln in self.lines:
            if ln.from_bus not in idset or ln.to_bus not in idset:
                raise GridError(f"line {ln.id}: endpoint not a bus")
            if ln.susceptance <= 0 or ln.limit_mw <= 0:
                raise GridError(f"line {ln.id}: susceptance and limit must be positive")
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        seen = {ids[0]}
        stack = [ids[0]]
        while stack:
            for j in adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        if seen != idset:
            raise GridError("network is not connected")
        for g in self.thermal:
            if g.bus not in idset:
                raise GridError(f"generator {g.id}: unknown bus")
            if g.p_min > g.p_max or g.p_min < 0:
                raise GridError(f"generator {g.id}: bad output limits")
            if g.cost_a < 0:
                raise GridError(f"generator {g.id}: concave cost")
        for r in self.res:
            if r.bus not in idset or r.capacity_mw <= 0:
                raise GridError(f"RES {r.id}: bad data")
        for b in self.bess:
            if b.bus not in idset:
                raise GridError(f"BESS {b.id}: unknown bus")
            if not (0 <= b.soc_min <= b.soc_max <= 1):
                raise GridError(f"BESS {b.id}: SOC bounds outside [0, 1]")
            if not (0 < b.eta_charge <= 1 and 0 < b.eta_discharge <= 1):
                raise GridError(f"BESS {b.id}: efficiencies outside (0, 1]")
        for n in self.cpn_nodes:
            n.validate()
            if n.bus not in idset:
                raise GridError(f"CPN node {n.id}: unknown bus")


# ---------------------------------------------------------------------------
# JSON round trip and the packaged system


def grid_to_dict(g: GridSpec) -> dict:
    return {
        "reference_bus": g.reference_bus,
        "carbon_price": g.carbon_price,
        "period_hours": g.period_hours,
        "buses": [{"id": b.id, "demand": list(map(float, b.demand))}
                  for b in g.buses],
        "lines": [{"id": l.id, "from": l.from_bus, "to": l.to_bus,
                   "susceptance": l.susceptance, "limit_mw": l.limit_mw}
                  for l in g.lines],
        "thermal": [{"id": t.id, "bus": t.bus, "a": t.cost_a, "b": t.cost_b,
                     "c": t.cost_c, "p_min": t.p_min, "p_max": t.p_max,
                     "ramp_up": t.ramp_up, "ramp_down": t.ramp_down,
                     "startup_cost": t.startup_cost,
                     "shutdown_cost": t.shutdown_cost,
                     "min_up": t.min_up, "min_down": t.min_down,
                     "emission_rate": t.emission_rate,
                     "initial_on": t.initial_on,
                     "initial_power": t.initial_power} for t in g.thermal],
        "res": [{"id": r.id, "bus": r.bus, "kind": r.kind,
                 "capacity_mw": r.capacity_mw} for r in g.res],
        "bess": [{"id": b.id, "bus": b.bus, "energy_mwh": b.energy_mwh,
                  "soc_min": b.soc_min, "soc_max": b.soc_max,
                  "p_charge_max": b.p_charge_max,
                  "p_discharge_max": b.p_discharge_max,
                  "eta_charge": b.eta_charge, "eta_discharge": b.eta_discharge,
                  "soc_initial": b.soc_initial} for b in g.bess],
        "cpn_nodes": [{"id": n.id, "bus": n.bus,
                       "compute_flops": n.compute_flops, "slots": n.slots,
                       "idle_mw": n.idle_mw, "peak_mw": n.peak_mw}
                      for n in g.cpn_nodes],
    }


def grid_from_dict(d: dict) -> GridSpec:
    g = GridSpec(
        buses=[Bus(id=int(b["id"]), demand=np.asarray(b["demand"], dtype=float))
               for b in d["buses"]],
        lines=[Line(id=int(l["id"]), from_bus=int(l["from"]), to_bus=int(l["to"]),
                    susceptance=float(l["susceptance"]),
                    limit_mw=float(l["limit_mw"])) for l in d["lines"]],
        thermal=[ThermalGen(id=t["id"], bus=int(t["bus"]), cost_a=float(t["a"]),
                            cost_b=float(t["b"]), cost_c=float(t["c"]),
                            p_min=float(t["p_min"]), p_max=float(t["p_max"]),
                            ramp_up=float(t["ramp_up"]),
                            ramp_down=float(t["ramp_down"]),
                            startup_cost=float(t["startup_cost"]),
                            shutdown_cost=float(t["shutdown_cost"]),
                            min_up=int(t["min_up"]), min_down=int(t["min_down"]),
                            emission_rate=float(t["emission_rate"]),
                            initial_on=bool(t["initial_on"]),
                            initial_power=float(t["initial_power"]))
                 for t in d["thermal"]],
        res=[ResGen(id=r["id"], bus=int(r["bus"]), kind=r["kind"],
                    capacity_mw=float(r["capacity_mw"])) for r in d["res"]],
        bess=[Bess(id=b["id"], bus=int(b["bus"]), energy_mwh=float(b["energy_mwh"]),
                   soc_min=float(b["soc_min"]), soc_max=float(b["soc_max"]),
                   p_charge_max=float(b["p_charge_max"]),
                   p_discharge_max=float(b["p_discharge_max"]),
                   eta_charge=float(b["eta_charge"]),
                   eta_discharge=float(b["eta_discharge"]),
                   soc_initial=float(b["soc_initial"])) for b in d["bess"]],
        reference_bus=int(d["reference_bus"]),
        carbon_price=float(d["carbon_price"]),
        period_hours=float(d["period_hours"]),
        cpn_nodes=[cpn.CpnNode(id=int(n["id"]), bus=int(n["bus"]),
                               compute_flops=float(n["compute_flops"]),
                               slots=int(n["slots"]), idle_mw=float(n["idle_mw"]),
                               peak_mw=float(n["peak_mw"]))
                   for n in d.get("cpn_nodes", [])],
    )
    g.validate()
    return g


def load_grid(path) -> GridSpec:
    with open(path) as fh:
        return grid_from_dict(json.load(fh))


def save_grid(g: GridSpec, path):
    with open(path, "w") as fh:
        json.dump(grid_to_dict(g), fh, indent=1, sort_keys=True)


def default_grid() -> GridSpec:
    """The packaged 30-bus system with thermal/RES/BESS/CPN additions."""
    text = resources.files("tsco").joinpath("data/ieee30_cpn.json").read_text()
    return grid_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# cost linearization


@dataclass(frozen=True)
class PiecewiseCost:
    breakpoints: np.ndarray     # segments+1 powers from p_min to p_max
    slopes: np.ndarray          # chord slope per segment, nondecreasing
    cost_at_min: float          # fuel cost at p_min ($/h), charged while on


def linearize_cost(gen: ThermalGen, segments: int) -> PiecewiseCost:
    """Uniform chord linearization of the quadratic fuel curve.

    Slopes are the chord slopes over each segment, so the piecewise curve
    equals the quadratic at every breakpoint and lies above it in between.
    """
    if segments < 1 or int(segments) != segments:
        raise InvalidSegmentCount(f"segments={segments}")
    width = gen.p_max - gen.p_min
    if width == 0.0:
        segments = 1
    pts = gen.p_min + width * np.arange(segments + 1) / segments
    vals = np.array([gen.fuel_cost(p) for p in pts])
    if width == 0.0:
        slopes = np.zeros(1)
    else:
        slopes = np.diff(vals) / np.diff(pts)
    return PiecewiseCost(breakpoints=pts, slopes=slopes,
                         cost_at_min=gen.fuel_cost(gen.p_min))


# ---------------------------------------------------------------------------
# single-period economic dispatch


@dataclass
class PrevState:
    gen_power: dict             # gen id -> MW at the previous period
    soc_mwh: dict               # BESS id -> MWh at the previous period


def initial_state(grid: GridSpec) -> PrevState:
    return PrevState(
        gen_power={g.id: (g.initial_power if g.initial_on else 0.0)
                   for g in grid.thermal},
        soc_mwh={b.id: b.soc_initial * b.energy_mwh for b in grid.bess})


@dataclass
class PeriodRealization:
    res_available: dict         # RES id -> MW available this period
    demand: dict                # bus id -> base demand MW
    cpn_demand: dict            # bus id -> CPN load MW (filled by the runtime)


def _check_commitment(grid: GridSpec, commitment: dict):
    known = {g.id for g in grid.thermal}
    for gid in commitment:
        if gid not in known:
            raise InconsistentCommitment(f"unknown generator {gid!r}")
    for gid in known:
        if gid not in commitment:
            raise InconsistentCommitment(f"missing generator {gid!r}")


def build_ed_lp(grid: GridSpec, commitment: dict, prev: PrevState,
                realization: PeriodRealization, segments: int = 8,
                enable_shed: bool = False):
    """Single-period dispatch LP.

    Per bus one balance equality, two inequality rows per line, committed
    output bounds, ramp rows against ``prev``, BESS SOC transition and
    bounds, RES dispatch capped at availability, reference angle pinned at
    zero.  Objective: piecewise fuel + carbon price on thermal emissions.
    Returns (LinearProgram, IndexMap).
    """
    _check_commitment(grid, commitment)
    dt = grid.period_hours
    lam = grid.carbon_price
    b = LpBuilder()

    for i in grid.bus_ids():
        if i == grid.reference_bus:
            b.add_var(("theta", i), lower=0.0, upper=0.0)
        else:
            b.add_var(("theta", i), lower=-np.inf, upper=np.inf)
    for g in grid.thermal:
        u = 1.0 if commitment[g.id] else 0.0
        pw = linearize_cost(g, segments)
        b.add_var(("p", g.id), cost=lam * g.emission_rate * dt,
                  lower=u * g.p_min, upper=u * g.p_max)
        width = (g.p_max - g.p_min) / segments
        for s in range(segments):
            b.add_var(("seg", g.id, s), cost=pw.slopes[s] * dt,
                      lower=0.0, upper=u * width)
        b.constant += u * pw.cost_at_min * dt
    for r in grid.res:
        avail = float(realization.res_available.get(r.id, 0.0))
        if avail > r.capacity_mw + 1e-9:
            raise GridError(f"RES {r.id}: availability above capacity")
        b.add_var(("res", r.id), lower=0.0, upper=avail)
    for bat in grid.bess:
        b.add_var(("chg", bat.id), lower=0.0, upper=bat.p_charge_max)
        b.add_var(("dis", bat.id), lower=0.0, upper=bat.p_discharge_max)
        b.add_var(("soc", bat.id), lower=bat.soc_min * bat.energy_mwh,
                  upper=bat.soc_max * bat.energy_mwh)
    if enable_shed:
        for i in grid.bus_ids():
            b.add_var(("shed", i), cost=SHED_PRICE * dt, lower=0.0)

    idx = b.index
    for g in grid.thermal:
        u = 1.0 if commitment[g.id] else 0.0
        coeffs = [(idx.var(("p", g.id)), 1.0)]
        coeffs += [(idx.var(("seg", g.id, s)), -1.0) for s in range(segments)]
        b.add_row(("link", g.id), coeffs, EQ, u * g.p_min)
    for i in grid.bus_ids():
        coeffs = []
        for g in grid.thermal:
            if g.bus == i:
                coeffs.append((idx.var(("p", g.id)), 1.0))
        for r in grid.res:
            if r.bus == i:
                coeffs.append((idx.var(("res", r.id)), 1.0))
        for bat in grid.bess:
            if bat.bus == i:
                coeffs.append((idx.var(("dis", bat.id)), 1.0))
                coeffs.append((idx.var(("chg", bat.id)), -1.0))
        if enable_shed:
            coeffs.append((idx.var(("shed", i)), 1.0))
        for ln in grid.lines:
            w = BASE_MVA * ln.susceptance
            if ln.from_bus == i:
                coeffs.append((idx.var(("theta", ln.from_bus)), -w))
                coeffs.append((idx.var(("theta", ln.to_bus)), w))
            elif ln.to_bus == i:
                coeffs.append((idx.var(("theta", ln.from_bus)), w))
                coeffs.append((idx.var(("theta", ln.to_bus)), -w))
        load = realization.demand.get(i, 0.0) + realization.cpn_demand.get(i, 0.0)
        b.add_row(("balance", i), coeffs, EQ, load)
    for ln in grid.lines:
        w = BASE_MVA * ln.susceptance
        coeffs = [(idx.var(("theta", ln.from_bus)), w),
                  (idx.var(("theta", ln.to_bus)), -w)]
        b.add_row(("line_hi", ln.id), coeffs, LE, ln.limit_mw)
        b.add_row(("line_lo", ln.id), coeffs, GE, -ln.limit_mw)
    for g in grid.thermal:
        # committed-off units sit at zero, so their rows relax to +-p_max;
        # the shutdown ramp is enforced by the day-ahead plan, not re-checked
        # against real-time actuals
        p0 = prev.gen_power.get(g.id, 0.0)
        j = idx.var(("p", g.id))
        if commitment[g.id]:
            b.add_row(("ramp_up", g.id), [(j, 1.0)], LE, p0 + g.ramp_up * dt)
            b.add_row(("ramp_dn", g.id), [(j, 1.0)], GE, p0 - g.ramp_down * dt)
        else:
            b.add_row(("ramp_up", g.id), [(j, 1.0)], LE, g.p_max)
            b.add_row(("ramp_dn", g.id), [(j, 1.0)], GE, -g.p_max)
    for bat in grid.bess:
        soc0 = prev.soc_mwh[bat.id]
        b.add_row(("soc", bat.id),
                  [(idx.var(("soc", bat.id)), 1.0),
                   (idx.var(("chg", bat.id)), -bat.eta_charge * dt),
                   (idx.var(("dis", bat.id)), dt / bat.eta_discharge)],
                  EQ, soc0)
    return b.build(), idx


@dataclass
class DispatchSolution:
    gen_power: dict
    res_dispatch: dict
    bess_charge: dict
    bess_discharge: dict
    soc_mwh: dict
    angles: dict
    flows: dict                 # line id -> MW from->to
    lmp: dict                   # bus id -> $/MWh
    mci: dict                   # bus id -> tCO2/MWh
    fuel_cost: float            # $ this period (piecewise curve)
    emissions: float            # tCO2 this period
    curtailment_mwh: float
    shed_mw: dict
    objective: float


def extract_lmps(outcome, index_map) -> dict:
    """Bus balance duals: d(cost)/d(load), $/MWh."""
    lmps = {}
    for key, row in index_map.rows.items():
        if isinstance(key, tuple) and key[0] == "balance":
            lmps[key[1]] = float(outcome.duals[row])
    if not lmps:
        raise solver.MissingRow("no balance rows in index map")
    return lmps


def total_emissions(dispatch: DispatchSolution, grid: GridSpec) -> float:
    """Sum of emission-rate-weighted thermal output over one period, tCO2."""
    out = 0.0
    for g in grid.thermal:
        out += g.emission_rate * dispatch.gen_power[g.id] * grid.period_hours
    return out


def _emission_rate_of(grid: GridSpec, outcome, index_map) -> float:
    rate = 0.0
    for g in grid.thermal:
        rate += g.emission_rate * outcome.x[index_map.var(("p", g.id))]
    return rate


def compute_mci(grid: GridSpec, lp, index_map, outcome, commitment: dict,
                delta: float = 0.1, buses=None):
    """Marginal carbon intensity per bus via a +delta MW load re-solve.

    Returns (mci dict, flags dict); a flagged bus means the perturbed LP was
    infeasible and the value fell back to the highest committed emission
    rate.  Values are clipped at zero.  ``buses`` restricts the computation.
    """
    base_rate = _emission_rate_of(grid, outcome, index_map)
    fallback = max((g.emission_rate for g in grid.thermal
                    if commitment.get(g.id)), default=0.0)
    mci, flags = {}, {}
    for i in (grid.bus_ids() if buses is None else buses):
        row = index_map.row(("balance", i))
        rhs = lp.rhs.copy()
        rhs[row] += delta
        pert = solver.LinearProgram(cost=lp.cost, rows=lp.rows, senses=lp.senses,
                                    rhs=rhs, lower=lp.lower, upper=lp.upper,
                                    objective_constant=lp.objective_constant)
        res = solve_lp(pert, basis=outcome.basis)
        if res.status != LpStatus.OPTIMAL:
            mci[i] = fallback
            flags[i] = True
            continue
        rate = _emission_rate_of(grid, res, index_map)
        mci[i] = max(0.0, (rate - base_rate) / delta)
        flags[i] = False
    return mci, flags


def extract_dispatch(grid: GridSpec, lp, index_map, outcome, commitment: dict,
                     realization: PeriodRealization, segments: int = 8,
                     mci: dict | None = None) -> DispatchSolution:
    x = outcome.x
    dt = grid.period_hours
    gen_power = {g.id: float(x[index_map.var(("p", g.id))]) for g in grid.thermal}
    res_dispatch = {r.id: float(x[index_map.var(("res", r.id))]) for r in grid.res}
    angles = {i: float(x[index_map.var(("theta", i))]) for i in grid.bus_ids()}
    flows = {}
    for ln in grid.lines:
        flows[ln.id] = BASE_MVA * ln.susceptance * (angles[ln.from_bus]
                                                    - angles[ln.to_bus])
    fuel = 0.0
    for g in grid.thermal:
        pw = linearize_cost(g, segments)
        if commitment[g.id]:
            fuel += pw.cost_at_min * dt
            for s in range(segments):
                fuel += pw.slopes[s] * x[index_map.var(("seg", g.id, s))] * dt
    emissions = sum(g.emission_rate * gen_power[g.id] * dt for g in grid.thermal)
    curtail = sum(max(0.0, realization.res_available.get(r.id, 0.0)
                      - res_dispatch[r.id]) * dt for r in grid.res)
    shed = {}
    for i in grid.bus_ids():
        if ("shed", i) in index_map.vars:
            v = float(x[index_map.var(("shed", i))])
            if v > 1e-9:
                shed[i] = v
    if mci is None:
        mci = {i: 0.0 for i in grid.bus_ids()}
    return DispatchSolution(
        gen_power=gen_power, res_dispatch=res_dispatch,
        bess_charge={bt.id: float(x[index_map.var(("chg", bt.id))])
                     for bt in grid.bess},
        bess_discharge={bt.id: float(x[index_map.var(("dis", bt.id))])
                        for bt in grid.bess},
        soc_mwh={bt.id: float(x[index_map.var(("soc", bt.id))])
                 for bt in grid.bess},
        angles=angles, flows=flows, lmp=extract_lmps(outcome, index_map),
        mci=mci, fuel_cost=fuel, emissions=emissions,
        curtailment_mwh=curtail, shed_mw=shed, objective=outcome.objective)


def _clear_simultaneous(grid, lp, idx, out):
    """Re-solve with the smaller of a simultaneous charge/discharge pinned."""
    for bat in grid.bess:
        c = out.x[idx.var(("chg", bat.id))]
        d = out.x[idx.var(("dis", bat.id))]
        if c > 1e-6 and d > 1e-6:
            upper = lp.upper.copy()
            if c <= d:
                upper[idx.var(("chg", bat.id))] = 0.0
            else:
                upper[idx.var(("dis", bat.id))] = 0.0
            lp = solver.LinearProgram(cost=lp.cost, rows=lp.rows,
                                      senses=lp.senses, rhs=lp.rhs,
                                      lower=lp.lower, upper=upper,
                                      names=lp.names,
                                      objective_constant=lp.objective_constant)
            out = solve_lp(lp)
    return lp, out


def solve_ed(grid: GridSpec, commitment: dict, prev: PrevState,
             realization: PeriodRealization, segments: int = 8,
             basis=None, mci_buses=()):
    """Build and solve one period of dispatch.

    Returns (DispatchSolution, LpOutcome, lp, index_map, shed_used).  If the
    plain LP is infeasible the period re-solves with load-shedding slacks at
    SHED_PRICE.  Simultaneous charge/discharge (possible only in degenerate
    zero-price situations) is cleared by re-solving with the smaller side
    fixed at zero.  ``mci_buses`` selects where MCI is computed (None: all).
    """
    lp, idx = build_ed_lp(grid, commitment, prev, realization, segments)
    out = solve_lp(lp, basis=basis)
    shed_used = False
    if out.status != LpStatus.OPTIMAL:
        lp, idx = build_ed_lp(grid, commitment, prev, realization, segments,
                              enable_shed=True)
        out = solve_lp(lp)
        shed_used = True
        if out.status != LpStatus.OPTIMAL:
            raise GridError("dispatch infeasible even with load shedding")
    lp, out = _clear_simultaneous(grid, lp, idx, out)
    mci = None
    if mci_buses is None or len(mci_buses):
        mci, _ = compute_mci(grid, lp, idx, out, commitment, buses=mci_buses)
    sol = extract_dispatch(grid, lp, idx, out, commitment, realization,
                           segments, mci=mci)
    return sol, out, lp, idx, shed_used


class EdTemplate:
    """Reusable single-period dispatch LP with in-place data patching.

    The row/column structure of the period LP is commitment-independent, so
    one build serves a whole run: each call swaps in the period's loads,
    availabilities, commitment bounds, and ramp anchors.  Indices are
    resolved once, which matters in the training loop.
    """

    def __init__(self, grid: GridSpec, segments: int = 8,
                 enable_shed: bool = False):
        self.grid = grid
        self.segments = segments
        self.enable_shed = enable_shed
        commit = {g.id: True for g in grid.thermal}
        prev = initial_state(grid)
        real = PeriodRealization(
            res_available={r.id: r.capacity_mw for r in grid.res},
            demand={}, cpn_demand={})
        self.lp, self.idx = build_ed_lp(grid, commit, prev, real, segments,
                                        enable_shed=enable_shed)
        idx = self.idx
        self._jp = {g.id: idx.var(("p", g.id)) for g in grid.thermal}
        self._jseg = {g.id: [idx.var(("seg", g.id, s)) for s in range(segments)]
                      for g in grid.thermal}
        self._jres = {r.id: idx.var(("res", r.id)) for r in grid.res}
        self._rlink = {g.id: idx.row(("link", g.id)) for g in grid.thermal}
        self._rbal = {i: idx.row(("balance", i)) for i in grid.bus_ids()}
        self._rup = {g.id: idx.row(("ramp_up", g.id)) for g in grid.thermal}
        self._rdn = {g.id: idx.row(("ramp_dn", g.id)) for g in grid.thermal}
        self._rsoc = {b.id: idx.row(("soc", b.id)) for b in grid.bess}

    def make_lp(self, commitment: dict, prev: PrevState,
                realization: PeriodRealization):
        _check_commitment(self.grid, commitment)
        g0 = self.grid
        dt = g0.period_hours
        lower = self.lp.lower.copy()
        upper = self.lp.upper.copy()
        rhs = self.lp.rhs.copy()
        const = 0.0
        for g in g0.thermal:
            u = 1.0 if commitment[g.id] else 0.0
            pw = linearize_cost(g, self.segments)
            width = (g.p_max - g.p_min) / self.segments
            j = self._jp[g.id]
            lower[j] = u * g.p_min
            upper[j] = u * g.p_max
            for js in self._jseg[g.id]:
                upper[js] = u * width
            rhs[self._rlink[g.id]] = u * g.p_min
            const += u * pw.cost_at_min * dt
            p0 = prev.gen_power.get(g.id, 0.0)
            if commitment[g.id]:
                rhs[self._rup[g.id]] = p0 + g.ramp_up * dt
                rhs[self._rdn[g.id]] = p0 - g.ramp_down * dt
            else:
                rhs[self._rup[g.id]] = g.p_max
                rhs[self._rdn[g.id]] = -g.p_max
        for r in g0.res:
            upper[self._jres[r.id]] = float(realization.res_available.get(r.id, 0.0))
        for i in g0.bus_ids():
            rhs[self._rbal[i]] = (realization.demand.get(i, 0.0)
                                  + realization.cpn_demand.get(i, 0.0))
        for bat in g0.bess:
            rhs[self._rsoc[bat.id]] = prev.soc_mwh[bat.id]
        return solver.LinearProgram(cost=self.lp.cost, rows=self.lp.rows,
                                    senses=self.lp.senses, rhs=rhs,
                                    lower=lower, upper=upper,
                                    names=self.lp.names,
                                    objective_constant=const)

    def solve(self, commitment: dict, prev: PrevState,
              realization: PeriodRealization, basis=None, mci_buses=()):
        """Same contract as solve_ed but reusing the prebuilt structure."""
        lp = self.make_lp(commitment, prev, realization)
        out = solve_lp(lp, basis=basis)
        shed_used = False
        if out.status != LpStatus.OPTIMAL:
            if not self.enable_shed:
                if not hasattr(self, "_shed_template"):
                    self._shed_template = EdTemplate(self.grid, self.segments,
                                                     enable_shed=True)
                tpl = self._shed_template
                sol, out, lp, _, _ = tpl.solve(commitment, prev, realization,
                                               mci_buses=mci_buses)
                return sol, out, lp, tpl.idx, True
            raise GridError("dispatch infeasible even with load shedding")
        lp, out = _clear_simultaneous(self.grid, lp, self.idx, out)
        mci = None
        if mci_buses is None or len(mci_buses):
            mci, _ = compute_mci(self.grid, lp, self.idx, out, commitment,
                                 buses=mci_buses)
        sol = extract_dispatch(self.grid, lp, self.idx, out, commitment,
                               realization, self.segments, mci=mci)
        return sol, out, lp, self.idx, shed_used


# ---------------------------------------------------------------------------
# multi-period linked dispatch (shared by the commitment subproblems and the
# extensive-form oracle)


def ptdf_matrix(grid: GridSpec) -> np.ndarray:
    """Line x bus sensitivity of MW flow to MW injection (reference bus 0)."""
    ids = grid.bus_ids()
    pos = {i: k for k, i in enumerate(ids)}
    nb, nl = len(ids), len(grid.lines)
    a = np.zeros((nl, nb))
    bd = np.zeros(nl)
    for k, ln in enumerate(grid.lines):
        a[k, pos[ln.from_bus]] = 1.0
        a[k, pos[ln.to_bus]] = -1.0
        bd[k] = ln.susceptance
    bbus = a.T @ (bd[:, None] * a)
    ref = pos[grid.reference_bus]
    keep = [k for k in range(nb) if k != ref]
    binv = np.zeros((nb, nb))
    binv[np.ix_(keep, keep)] = np.linalg.inv(bbus[np.ix_(keep, keep)])
    return (bd[:, None] * a) @ binv


@dataclass
class MultiPeriodSpec:
    """Inputs for the T-linked dispatch LP.

    ``demand[t][bus]`` is total load (base + CPN estimate) in MW,
    ``res_available[t][res_id]`` in MW.  ``commitment`` maps gen id to a
    length-T 0/1 array; when ``commitment_vars`` names are provided instead,
    the builder emits u-columns (used by the extensive-form oracle).
    """

    demand: list
    res_available: list
    commitment: dict | None = None
    segments: int = 8
    line_rows: str = "all"       # "all" | "lazy" (rows added on violation)
    carbon_price: float | None = None
    soc_terminal: bool = True    # require SOC_T >= initial SOC


def add_dispatch_block(b: LpBuilder, grid: GridSpec, spec: MultiPeriodSpec,
                       u_vars: bool = False, active_lines=None, tag=None,
                       weight: float = 1.0):
    """Emit one T-period dispatch block into a shared builder.

    Injection (PTDF) form: one system balance per period, line rows per the
    ``line_rows`` policy (``active_lines`` overrides with an explicit id
    list), per-generator link rows tying output to segments and commitment,
    plain ramp rows, SOC chains.  With ``u_vars`` the commitment enters as
    binary columns (bounds become rows); otherwise it is data and the
    u-dependent terms land in bounds, rhs, and the objective constant.

    ``tag`` suffixes every name (so scenario blocks can share one builder)
    and ``weight`` scales this block's objective contribution.
    """
    if spec.commitment is not None:
        _check_commitment(grid, spec.commitment)
    T = len(spec.demand)
    dt = grid.period_hours
    lam = grid.carbon_price if spec.carbon_price is None else spec.carbon_price
    segs = spec.segments
    idx = b.index
    ids = grid.bus_ids()
    pos = {i: k for k, i in enumerate(ids)}

    def nm(*parts):
        return parts + ((tag,) if tag is not None else ())

    def uval(gid, t):
        return float(spec.commitment[gid][t])

    if u_vars:
        # the u column charges fuel at p_min; carbon rides on p, which
        # already includes the p_min share through the link row
        for g in grid.thermal:
            pw = linearize_cost(g, segs)
            for t in range(T):
                b.add_var(nm("u", g.id, t), lower=0.0, upper=1.0,
                          cost=weight * pw.cost_at_min * dt)
    for t in range(T):
        for g in grid.thermal:
            pw = linearize_cost(g, segs)
            width = (g.p_max - g.p_min) / segs
            carbon = weight * lam * g.emission_rate * dt
            b.add_var(nm("p", g.id, t), cost=carbon, lower=0.0)
            if u_vars:
                for s in range(segs):
                    b.add_var(nm("seg", g.id, t, s),
                              cost=weight * pw.slopes[s] * dt,
                              lower=0.0, upper=width)
            else:
                u = uval(g.id, t)
                for s in range(segs):
                    b.add_var(nm("seg", g.id, t, s),
                              cost=weight * pw.slopes[s] * dt,
                              lower=0.0, upper=u * width)
                b.constant += weight * u * pw.cost_at_min * dt
        for r in grid.res:
            b.add_var(nm("res", r.id, t), lower=0.0,
                      upper=float(spec.res_available[t].get(r.id, 0.0)))
        for bat in grid.bess:
            b.add_var(nm("chg", bat.id, t), lower=0.0, upper=bat.p_charge_max)
            b.add_var(nm("dis", bat.id, t), lower=0.0, upper=bat.p_discharge_max)
            b.add_var(nm("soc", bat.id, t), lower=bat.soc_min * bat.energy_mwh,
                      upper=bat.soc_max * bat.energy_mwh)

    prev0 = initial_state(grid)
    for t in range(T):
        for g in grid.thermal:
            coeffs = [(idx.var(nm("p", g.id, t)), 1.0)]
            coeffs += [(idx.var(nm("seg", g.id, t, s)), -1.0)
                       for s in range(segs)]
            width = (g.p_max - g.p_min) / segs
            if u_vars:
                coeffs.append((idx.var(nm("u", g.id, t)), -g.p_min))
                b.add_row(nm("link", g.id, t), coeffs, EQ, 0.0)
                b.add_row(nm("capmax", g.id, t),
                          [(idx.var(nm("p", g.id, t)), 1.0),
                           (idx.var(nm("u", g.id, t)), -g.p_max)], LE, 0.0)
                for s in range(segs):
                    b.add_row(nm("segcap", g.id, t, s),
                              [(idx.var(nm("seg", g.id, t, s)), 1.0),
                               (idx.var(nm("u", g.id, t)), -width)], LE, 0.0)
            else:
                b.add_row(nm("link", g.id, t), coeffs, EQ,
                          uval(g.id, t) * g.p_min)
        bal = []
        for g in grid.thermal:
            bal.append((idx.var(nm("p", g.id, t)), 1.0))
        for r in grid.res:
            bal.append((idx.var(nm("res", r.id, t)), 1.0))
        for bat in grid.bess:
            bal.append((idx.var(nm("dis", bat.id, t)), 1.0))
            bal.append((idx.var(nm("chg", bat.id, t)), -1.0))
        total_load = float(sum(spec.demand[t].values()))
        b.add_row(nm("balance", t), bal, EQ, total_load)
        for g in grid.thermal:
            j = idx.var(nm("p", g.id, t))
            if t == 0:
                p0 = prev0.gen_power[g.id]
                b.add_row(nm("ramp_up", g.id, t), [(j, 1.0)], LE,
                          p0 + g.ramp_up * dt)
                b.add_row(nm("ramp_dn", g.id, t), [(j, 1.0)], GE,
                          p0 - g.ramp_down * dt)
            else:
                jp = idx.var(nm("p", g.id, t - 1))
                b.add_row(nm("ramp_up", g.id, t), [(j, 1.0), (jp, -1.0)], LE,
                          g.ramp_up * dt)
                b.add_row(nm("ramp_dn", g.id, t), [(jp, 1.0), (j, -1.0)], LE,
                          g.ramp_down * dt)
        for bat in grid.bess:
            coeffs = [(idx.var(nm("soc", bat.id, t)), 1.0),
                      (idx.var(nm("chg", bat.id, t)), -bat.eta_charge * dt),
                      (idx.var(nm("dis", bat.id, t)), dt / bat.eta_discharge)]
            if t == 0:
                b.add_row(nm("soc", bat.id, t), coeffs, EQ,
                          prev0.soc_mwh[bat.id])
            else:
                coeffs.append((idx.var(nm("soc", bat.id, t - 1)), -1.0))
                b.add_row(nm("soc", bat.id, t), coeffs, EQ, 0.0)
    if spec.soc_terminal:
        for bat in grid.bess:
            b.add_row(nm("soc_final", bat.id),
                      [(idx.var(nm("soc", bat.id, T - 1)), 1.0)], GE,
                      prev0.soc_mwh[bat.id])

    ptdf = ptdf_matrix(grid)
    if active_lines is None:
        active_lines = ([ln.id for ln in grid.lines]
                        if spec.line_rows == "all" else [])
    _add_line_rows(grid, spec, b, idx, ptdf, pos, list(active_lines), tag)
    return ptdf


def build_multiperiod_lp(grid: GridSpec, spec: MultiPeriodSpec,
                         u_vars: bool = False, active_lines=None):
    """Single-block wrapper around add_dispatch_block."""
    b = LpBuilder()
    ptdf = add_dispatch_block(b, grid, spec, u_vars=u_vars,
                              active_lines=active_lines)
    return b.build(), b.index, ptdf


def _injection_coeffs(grid: GridSpec, idx, t: int, tag=None):
    """(bus position, var index, sign) triples for every injection column."""
    ids = grid.bus_ids()
    pos = {i: k for k, i in enumerate(ids)}
    suffix = (tag,) if tag is not None else ()
    out = []
    for g in grid.thermal:
        out.append((pos[g.bus], idx.var(("p", g.id, t) + suffix), 1.0))
    for r in grid.res:
        out.append((pos[r.bus], idx.var(("res", r.id, t) + suffix), 1.0))
    for bat in grid.bess:
        out.append((pos[bat.bus], idx.var(("dis", bat.id, t) + suffix), 1.0))
        out.append((pos[bat.bus], idx.var(("chg", bat.id, t) + suffix), -1.0))
    return out


def _add_line_rows(grid, spec, b, idx, ptdf, pos, line_ids, tag=None):
    if not line_ids:
        return
    T = len(spec.demand)
    by_id = {ln.id: k for k, ln in enumerate(grid.lines)}
    suffix = (tag,) if tag is not None else ()
    for t in range(T):
        inj = _injection_coeffs(grid, idx, t, tag)
        load_shift = np.zeros(ptdf.shape[1])
        for bus, mw in spec.demand[t].items():
            load_shift[pos[bus]] += mw
        for lid in line_ids:
            k = by_id[lid]
            row = ptdf[k]
            coeffs = [(j, row[p] * sgn) for p, j, sgn in inj
                      if abs(row[p]) > 1e-12]
            const = float(row @ load_shift)  # withdrawals at load buses
            ln = grid.lines[k]
            b.add_row(("line_hi", lid, t) + suffix, coeffs, LE,
                      ln.limit_mw + const)
            b.add_row(("line_lo", lid, t) + suffix, coeffs, GE,
                      -ln.limit_mw + const)


def solve_multiperiod(grid: GridSpec, spec: MultiPeriodSpec, warm=None,
                      active_lines=None):
    """Solve the linked dispatch with lazily generated line rows.

    Starts from ``active_lines`` (empty in "lazy" mode), adds the rows of any
    line whose implied flow violates its limit, and repeats; the fixed point
    satisfies every line limit, so omitted rows are slack with zero duals.
    Returns (outcome, lp, index_map, active_lines).
    """
    if active_lines is None:
        active = set() if spec.line_rows == "lazy" else None
    else:
        active = set(active_lines)
    for _ in range(len(grid.lines) + 1):
        lp, idx, ptdf = build_multiperiod_lp(
            grid, spec, active_lines=sorted(active) if active is not None else None)
        out = solve_lp(lp, basis=warm)
        warm = None  # structure changes between rounds
        if out.status != LpStatus.OPTIMAL or active is None:
            return out, lp, idx, sorted(active) if active is not None else None
        flows = line_flows_multiperiod(grid, spec, idx, out.x, ptdf)
        violated = set()
        for k, ln in enumerate(grid.lines):
            if ln.id in active:
                continue
            if np.any(np.abs(flows[:, k]) > ln.limit_mw + 1e-6):
                violated.add(ln.id)
        if not violated:
            return out, lp, idx, sorted(active)
        active |= violated
    raise GridError("lazy line-row generation failed to converge")


def line_flows_multiperiod(grid: GridSpec, spec: MultiPeriodSpec, idx, x,
                           ptdf) -> np.ndarray:
    """(T x lines) MW flows implied by a multiperiod solution vector."""
    T = len(spec.demand)
    ids = grid.bus_ids()
    pos = {i: k for k, i in enumerate(ids)}
    flows = np.zeros((T, len(grid.lines)))
    for t in range(T):
        inj = np.zeros(len(ids))
        for p, j, sgn in _injection_coeffs(grid, idx, t):
            inj[p] += sgn * x[j]
        for bus, mw in spec.demand[t].items():
            inj[pos[bus]] -= mw
        flows[t] = ptdf @ inj
    return flows
