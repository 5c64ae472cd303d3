"""Day-ahead stochastic unit commitment via Benders decomposition.

The master MILP picks hourly on/off states (plus startup/shutdown indicators
under min-up/min-down rules) and per-scenario recourse estimates; each
scenario's recourse is the T-linked dispatch LP with the commitment fixed.
Feasible subproblems yield optimality cuts from the duals of the
commitment-linked rows and bounds; infeasible ones yield feasibility cuts
from the phase-1 (Farkas) certificate.  An extensive-form oracle built from
the same dispatch rows is included for validation.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import cpn as cpnmod
from . import grid as gridmod
from .grid import GridSpec, MultiPeriodSpec, linearize_cost
from .scenario import Scenario
from .solver import (EQ, GE, LE, LpBuilder, LpStatus, MilpSpec, solve_lp,
                     solve_milp)

THETA_FLOOR = -1.0e7       # recourse lower bound before the first cuts


class SucError(Exception):
    pass


class MasterInfeasible(SucError):
    """Accumulated cuts contradict each other: a modeling bug, not a result."""


class DegenerateCertificate(SucError):
    pass


@dataclass
class CommitmentSchedule:
    """u[gid] is a length-T int array; indicators derive from the initial state."""

    u: dict
    horizon: int

    def startups(self, grid: GridSpec) -> dict:
        out = {}
        for g in grid.thermal:
            seq = self.u[g.id]
            prev = 1 if g.initial_on else 0
            s = np.zeros(self.horizon, dtype=int)
            for t in range(self.horizon):
                s[t] = 1 if (seq[t] == 1 and prev == 0) else 0
                prev = seq[t]
            out[g.id] = s
        return out

    def shutdowns(self, grid: GridSpec) -> dict:
        out = {}
        for g in grid.thermal:
            seq = self.u[g.id]
            prev = 1 if g.initial_on else 0
            d = np.zeros(self.horizon, dtype=int)
            for t in range(self.horizon):
                d[t] = 1 if (seq[t] == 0 and prev == 1) else 0
                prev = seq[t]
            out[g.id] = d
        return out

    def commitment_cost(self, grid: GridSpec) -> float:
        su = self.startups(grid)
        sd = self.shutdowns(grid)
        return float(sum(g.startup_cost * su[g.id].sum()
                         + g.shutdown_cost * sd[g.id].sum()
                         for g in grid.thermal))

    def check_min_times(self, grid: GridSpec):
        """Raise if any unit violates its minimum up or down time."""
        for g in grid.thermal:
            seq = list(self.u[g.id])
            runs = []
            cur, length = seq[0], 1
            for v in seq[1:]:
                if v == cur:
                    length += 1
                else:
                    runs.append((cur, length, False))
                    cur, length = v, 1
            runs.append((cur, length, True))  # final run may be cut short
            first_matches_initial = (seq[0] == (1 if g.initial_on else 0))
            for k, (v, length, last) in enumerate(runs):
                if last:
                    continue  # horizon truncation
                if k == 0 and first_matches_initial:
                    continue  # continuation of the initial state
                need = g.min_up if v == 1 else g.min_down
                if length < need:
                    raise SucError(
                        f"{g.id}: {'up' if v else 'down'}-run of {length} h "
                        f"violates minimum {need} h")

    def column(self, t: int, grid: GridSpec) -> dict:
        return {g.id: bool(self.u[g.id][t]) for g in grid.thermal}


@dataclass
class BendersCut:
    kind: str                   # "optimality" | "feasibility"
    scenario_id: int
    constant: float
    coeffs: dict                # (gid, t) -> coefficient on u
    iteration: int


@dataclass
class BendersTrace:
    iterations: list = field(default_factory=list)
    converged: bool = False
    hit_max_iter: bool = False

    def record(self, k, lb, ub, n_opt, n_feas, seconds):
        self.iterations.append(
            {"iteration": k, "lower_bound": lb, "upper_bound": ub,
             "optimality_cuts": n_opt, "feasibility_cuts": n_feas,
             "seconds": seconds})

    def to_csv(self, path):
        cols = ["iteration", "lower_bound", "upper_bound",
                "optimality_cuts", "feasibility_cuts", "seconds"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.iterations:
                w.writerow([row[c] for c in cols])


# ---------------------------------------------------------------------------
# CPN baseload estimate used inside stage-1 subproblems


def cpn_baseload(grid: GridSpec, scen: Scenario) -> list:
    """Per-period bus loads (MW) from idle power plus each job's workload
    spread uniformly over its arrival-to-deadline window."""
    T = grid.horizon
    util = {n.id: np.zeros(T) for n in grid.cpn_nodes}
    for node in grid.cpn_nodes:
        for job in scen.jobs.get(node.id, ()):
            total = sum(t.workload for t in job.tasks)
            window = max(job.deadline - job.arrival, 1)
            per_period = total / (window * 3600.0 * node.compute_flops)
            for t in range(job.arrival, min(job.deadline, T)):
                util[node.id][t] += per_period
    out = []
    for t in range(T):
        loads = {}
        for node in grid.cpn_nodes:
            frac = min(1.0, float(util[node.id][t]))
            mw = node.idle_mw + (node.peak_mw - node.idle_mw) * frac
            loads[node.bus] = loads.get(node.bus, 0.0) + mw
        out.append(loads)
    return out


def _subproblem_spec(grid: GridSpec, scen: Scenario,
                     commitment: CommitmentSchedule | None,
                     segments: int, carbon_price=None) -> MultiPeriodSpec:
    T = grid.horizon
    base = cpn_baseload(grid, scen)
    demand = []
    for t in range(T):
        d = {bus: float(series[t]) for bus, series in scen.demand.items()}
        for bus, mw in base[t].items():
            d[bus] = d.get(bus, 0.0) + mw
        demand.append(d)
    res = [{rid: float(series[t])
            for rid, series in scen.res_availability.items()}
           for t in range(T)]
    return MultiPeriodSpec(
        demand=demand, res_available=res,
        commitment=None if commitment is None else commitment.u,
        segments=segments, line_rows="lazy", carbon_price=carbon_price)


@dataclass
class SubproblemResult:
    feasible: bool
    scenario_id: int
    objective: float | None = None
    mu: dict | None = None            # d(value)/d(u[g,t]) at the commitment
    infeasibility: float = 0.0
    sigma: dict | None = None         # subgradient of the phase-1 value
    link_duals: dict | None = None
    outcome: object = None
    active_lines: list | None = None


def _u_sensitivities(grid, idx, duals, red_costs, segments, include_const,
                     carbon_price=None):
    """d(value)/du from link-row duals, segment-bound multipliers, and (for
    the phase-2 value) the fuel-at-minimum constant."""
    dt = grid.period_hours
    T = grid.horizon
    mu = {}
    link = {}
    for g in grid.thermal:
        pw = linearize_cost(g, segments)
        width = (g.p_max - g.p_min) / segments
        for t in range(T):
            y_link = float(duals[idx.row(("link", g.id, t))])
            seg_part = 0.0
            for s in range(segments):
                d = float(red_costs[idx.var(("seg", g.id, t, s))])
                seg_part += width * min(d, 0.0)
            val = g.p_min * y_link + seg_part
            if include_const:
                val += pw.cost_at_min * dt
            mu[(g.id, t)] = val
            link[(g.id, t)] = y_link
    return mu, link


def solve_subproblem(grid: GridSpec, scen: Scenario,
                     commitment: CommitmentSchedule, segments: int = 8,
                     carbon_price=None, warm=None,
                     active_lines=None) -> SubproblemResult:
    """T-linked dispatch for one scenario under a fixed commitment.

    Feasible: returns the scenario cost and the value-function gradient with
    respect to each u[g,t] (capacity information enters through the link row
    and segment bounds).  Infeasible: returns the phase-1 certificate
    restated as an infeasibility measure plus its subgradient.
    """
    spec = _subproblem_spec(grid, scen, commitment, segments, carbon_price)
    out, lp, idx, lines = gridmod.solve_multiperiod(
        grid, spec, warm=warm, active_lines=active_lines)
    if out.status == LpStatus.OPTIMAL:
        mu, link = _u_sensitivities(grid, idx, out.duals, out.reduced_costs,
                                    segments, include_const=True)
        return SubproblemResult(feasible=True, scenario_id=scen.id,
                                objective=out.objective, mu=mu,
                                link_duals=link, outcome=out,
                                active_lines=lines)
    if out.status != LpStatus.INFEASIBLE:
        raise SucError(f"scenario {scen.id}: subproblem {out.status}")
    cert = out.farkas
    sigma, _ = _u_sensitivities(grid, idx, cert.row_duals,
                                cert.bound_multipliers, segments,
                                include_const=False)
    norm = max(abs(v) for v in sigma.values()) if sigma else 0.0
    if norm < 1e-10 and cert.infeasibility < 1e-10:
        raise DegenerateCertificate(f"scenario {scen.id}")
    return SubproblemResult(feasible=False, scenario_id=scen.id,
                            infeasibility=cert.infeasibility, sigma=sigma,
                            outcome=out, active_lines=lines)


def make_optimality_cut(sub: SubproblemResult,
                        commitment: CommitmentSchedule,
                        iteration: int) -> BendersCut:
    """theta_w >= v(u0) + mu'(u - u0), tight at the generating commitment."""
    assert sub.feasible
    const = sub.objective
    for (gid, t), m in sub.mu.items():
        const -= m * float(commitment.u[gid][t])
    return BendersCut(kind="optimality", scenario_id=sub.scenario_id,
                      constant=const, coeffs=dict(sub.mu), iteration=iteration)


def make_feasibility_cut(sub: SubproblemResult,
                         commitment: CommitmentSchedule,
                         iteration: int) -> BendersCut:
    """0 >= r(u0) + sigma'(u - u0); the generating commitment violates it."""
    assert not sub.feasible
    const = sub.infeasibility
    for (gid, t), s in sub.sigma.items():
        const -= s * float(commitment.u[gid][t])
    return BendersCut(kind="feasibility", scenario_id=sub.scenario_id,
                      constant=const, coeffs=dict(sub.sigma),
                      iteration=iteration)


def evaluate_cut(cut: BendersCut, commitment: CommitmentSchedule) -> float:
    """Right-hand side of the cut at a commitment: constant + coeffs . u."""
    val = cut.constant
    for (gid, t), c in cut.coeffs.items():
        val += c * float(commitment.u[gid][t])
    return val


# ---------------------------------------------------------------------------
# master problem


def _add_commitment_logic(b: LpBuilder, grid: GridSpec, horizon: int,
                          u_name, weight: float = 1.0):
    """Startup/shutdown indicators and min-up/min-down rows on existing u
    columns named by ``u_name(gid, t)``."""
    idx = b.index
    for g in grid.thermal:
        for t in range(horizon):
            b.add_var(("start", g.id, t), cost=weight * g.startup_cost,
                      lower=0.0, upper=1.0)
            b.add_var(("stop", g.id, t), cost=weight * g.shutdown_cost,
                      lower=0.0, upper=1.0)
    for g in grid.thermal:
        u0 = 1.0 if g.initial_on else 0.0
        for t in range(horizon):
            s = idx.var(("start", g.id, t))
            d = idx.var(("stop", g.id, t))
            u = idx.var(u_name(g.id, t))
            if t == 0:
                b.add_row(("start_def", g.id, t), [(s, 1.0), (u, -1.0)],
                          GE, -u0)
                b.add_row(("stop_def", g.id, t), [(d, 1.0), (u, 1.0)],
                          GE, u0)
            else:
                up = idx.var(u_name(g.id, t - 1))
                b.add_row(("start_def", g.id, t),
                          [(s, 1.0), (u, -1.0), (up, 1.0)], GE, 0.0)
                b.add_row(("stop_def", g.id, t),
                          [(d, 1.0), (u, 1.0), (up, -1.0)], GE, 0.0)
        for t in range(horizon):
            lo = max(0, t - g.min_up + 1)
            coeffs = [(idx.var(("start", g.id, k)), 1.0)
                      for k in range(lo, t + 1)]
            coeffs.append((idx.var(u_name(g.id, t)), -1.0))
            b.add_row(("min_up", g.id, t), coeffs, LE, 0.0)
            lo = max(0, t - g.min_down + 1)
            coeffs = [(idx.var(("stop", g.id, k)), 1.0)
                      for k in range(lo, t + 1)]
            coeffs.append((idx.var(u_name(g.id, t)), 1.0))
            b.add_row(("min_down", g.id, t), coeffs, LE, 1.0)


def build_master(grid: GridSpec, horizon: int, cuts: list,
                 probabilities: dict, adequacy: dict | None = None,
                 rel_gap: float = 1e-8):
    """Commitment MILP: startup/shutdown cost plus probability-weighted
    recourse estimates, subject to min-up/down rules and accumulated cuts.

    ``adequacy`` maps period -> thermal MW that must be committable; these
    rows are implied by subproblem feasibility (load net of every other
    resource), so they tighten the master without excluding anything.
    """
    b = LpBuilder()
    idx = b.index
    for g in grid.thermal:
        for t in range(horizon):
            b.add_var(("u", g.id, t), lower=0.0, upper=1.0)
    _add_commitment_logic(b, grid, horizon, lambda gid, t: ("u", gid, t))
    for sid, prob in sorted(probabilities.items()):
        b.add_var(("theta", sid), cost=prob, lower=THETA_FLOOR)
    if adequacy:
        for t, need in sorted(adequacy.items()):
            if need <= 0:
                continue
            coeffs = [(idx.var(("u", g.id, t)), g.p_max) for g in grid.thermal]
            b.add_row(("adequacy", t), coeffs, GE, need)
    for k, cut in enumerate(cuts):
        coeffs = [(idx.var(("u", gid, t)), -c)
                  for (gid, t), c in sorted(cut.coeffs.items())]
        if cut.kind == "optimality":
            coeffs.append((idx.var(("theta", cut.scenario_id)), 1.0))
            b.add_row(("cut", k), coeffs, GE, cut.constant)
        else:
            b.add_row(("cut", k), coeffs, GE, cut.constant)
    lp = b.build()
    integer = [idx.var(("u", g.id, t))
               for g in grid.thermal for t in range(horizon)]
    return MilpSpec(lp=lp, integer_indices=integer, rel_gap=rel_gap,
                    node_limit=200_000), idx


def _adequacy_requirements(grid: GridSpec, scenarios: list,
                           segments: int) -> dict:
    """Per-period committable-capacity floor implied by the worst scenario:
    load (with the CPN baseload) minus renewables minus storage discharge."""
    dis_cap = sum(b.p_discharge_max for b in grid.bess)
    need = {}
    for scen in scenarios:
        spec = _subproblem_spec(grid, scen, None, segments)
        for t in range(grid.horizon):
            load = sum(spec.demand[t].values())
            res = sum(spec.res_available[t].values())
            need[t] = max(need.get(t, 0.0), load - res - dis_cap)
    return need


def _schedule_from_x(grid: GridSpec, horizon: int, idx, x) -> CommitmentSchedule:
    u = {g.id: np.array([int(round(x[idx.var(("u", g.id, t))]))
                         for t in range(horizon)]) for g in grid.thermal}
    return CommitmentSchedule(u=u, horizon=horizon)


def all_on_schedule(grid: GridSpec, horizon: int) -> CommitmentSchedule:
    return CommitmentSchedule(
        u={g.id: np.ones(horizon, dtype=int) for g in grid.thermal},
        horizon=horizon)


@dataclass
class BendersResult:
    schedule: CommitmentSchedule
    trace: BendersTrace
    cuts: list
    upper_bound: float
    lower_bound: float
    expected_recourse: float


def run_benders(grid: GridSpec, scenarios: list, tol: float = 1e-4,
                max_iter: int = 50, segments: int = 8,
                carbon_price=None) -> BendersResult:
    """Alternate master solves and per-scenario dispatch subproblems until
    the relative bound gap closes.

    The first iteration evaluates the all-on commitment so an upper bound
    exists before the master has any information.  Subproblems are
    independent pure solves; their bases and lazily activated line rows are
    reused across iterations per scenario.
    """
    if tol <= 0:
        raise SucError("tolerance must be positive")
    T = grid.horizon
    probs = {s.id: s.probability for s in scenarios}
    adequacy = _adequacy_requirements(grid, scenarios, segments)
    master_gap = max(1e-9, min(1e-8, tol * 1e-2))
    cuts: list = []
    trace = BendersTrace()
    warm = {s.id: None for s in scenarios}
    lines = {s.id: None for s in scenarios}
    best_ub = np.inf
    incumbent = None
    lb = -np.inf
    theta_vals = None

    def evaluate(schedule, iteration):
        nonlocal best_ub, incumbent
        total = 0.0
        feasible = True
        for scen in scenarios:
            sub = solve_subproblem(grid, scen, schedule, segments,
                                   carbon_price, warm=warm[scen.id],
                                   active_lines=lines[scen.id])
            lines[scen.id] = sub.active_lines
            if sub.feasible:
                warm[scen.id] = sub.outcome.basis
                cuts.append(make_optimality_cut(sub, schedule, iteration))
                total += probs[scen.id] * sub.objective
            else:
                feasible = False
                cuts.append(make_feasibility_cut(sub, schedule, iteration))
        if feasible:
            ub = schedule.commitment_cost(grid) + total
            if ub < best_ub - 1e-9:
                best_ub = ub
                incumbent = schedule
        return feasible

    start = time.time()
    evaluate(all_on_schedule(grid, T), iteration=0)
    n_opt = sum(1 for c in cuts if c.kind == "optimality")
    n_feas = len(cuts) - n_opt
    trace.record(0, lb, best_ub, n_opt, n_feas, time.time() - start)

    def master_point(spec, idx, schedule):
        """Master-feasible point from a known-good commitment: indicators
        from the schedule, recourse estimates at the tightest cut."""
        x = np.zeros(spec.lp.n_vars)
        su = schedule.startups(grid)
        sd = schedule.shutdowns(grid)
        for g in grid.thermal:
            for t in range(T):
                x[idx.var(("u", g.id, t))] = schedule.u[g.id][t]
                x[idx.var(("start", g.id, t))] = su[g.id][t]
                x[idx.var(("stop", g.id, t))] = sd[g.id][t]
        for sid in probs:
            best = THETA_FLOOR
            for cut in cuts:
                if cut.kind == "optimality" and cut.scenario_id == sid:
                    best = max(best, evaluate_cut(cut, schedule))
            x[idx.var(("theta", sid))] = best
        return x

    for k in range(1, max_iter + 1):
        t0 = time.time()
        spec, idx = build_master(grid, T, cuts, probs, adequacy=adequacy,
                                 rel_gap=master_gap)
        seed = master_point(spec, idx, incumbent) if incumbent is not None else None
        res = solve_milp(spec, incumbent=seed)
        if res.status == LpStatus.INFEASIBLE:
            raise MasterInfeasible(
                "cut set admits no commitment; check the model")
        lb = max(lb, res.bound)
        candidate = _schedule_from_x(grid, T, idx, res.x)
        candidate.check_min_times(grid)
        theta_vals = {sid: float(res.x[idx.var(("theta", sid))])
                      for sid in probs}
        evaluate(candidate, iteration=k)
        n_opt = sum(1 for c in cuts if c.kind == "optimality")
        n_feas = len(cuts) - n_opt
        gap = (best_ub - lb) / max(1.0, abs(best_ub))
        trace.record(k, lb, best_ub, n_opt, n_feas, time.time() - t0)
        if gap <= tol:
            trace.converged = True
            for sid, v in theta_vals.items():
                assert v > THETA_FLOOR + 1.0, \
                    f"theta floor active at convergence (scenario {sid})"
            break
    else:
        trace.hit_max_iter = True
    if incumbent is None:
        raise MasterInfeasible("no feasible commitment found")
    return BendersResult(schedule=incumbent, trace=trace, cuts=cuts,
                         upper_bound=best_ub, lower_bound=lb,
                         expected_recourse=best_ub - incumbent.commitment_cost(grid))


# ---------------------------------------------------------------------------
# extensive form (oracle): every scenario block in one MILP, u shared


def solve_extensive_form(grid: GridSpec, scenarios: list, segments: int = 8,
                         carbon_price=None, rel_gap: float = 1e-9):
    """One MILP over shared commitments and all scenario dispatch blocks.

    Uses the same dispatch row builders as the Benders subproblems; scenario
    u-copies are tied to the scenario-0 binaries by equality rows.
    """
    b = LpBuilder()
    idx = b.index
    T = grid.horizon
    for k, scen in enumerate(scenarios):
        spec = _subproblem_spec(grid, scen, None, segments, carbon_price)
        spec.line_rows = "all"
        add_dispatch = gridmod.add_dispatch_block
        add_dispatch(b, grid, spec, u_vars=True, tag=scen.id,
                     weight=scen.probability)
    first = scenarios[0].id
    for scen in scenarios[1:]:
        for g in grid.thermal:
            for t in range(T):
                b.add_row(("u_tie", g.id, t, scen.id),
                          [(idx.var(("u", g.id, t, scen.id)), 1.0),
                           (idx.var(("u", g.id, t, first)), -1.0)], EQ, 0.0)
    _add_commitment_logic(b, grid, T,
                          lambda gid, t: ("u", gid, t, first))
    lp = b.build()
    integer = [idx.var(("u", g.id, t, first))
               for g in grid.thermal for t in range(T)]
    res = solve_milp(MilpSpec(lp=lp, integer_indices=integer,
                              rel_gap=rel_gap, node_limit=500_000))
    if res.status != LpStatus.OPTIMAL:
        return res, None
    u = {g.id: np.array([int(round(res.x[idx.var(("u", g.id, t, first))]))
                         for t in range(T)]) for g in grid.thermal}
    return res, CommitmentSchedule(u=u, horizon=T)
