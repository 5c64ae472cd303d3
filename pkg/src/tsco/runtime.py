"""Real-time stage: per-period dispatch coupled to sub-hourly task
scheduling, plus the comparison policies.

Each period: realize the scenario, dispatch against the previous period's
compute-load estimate, hand fresh prices and carbon intensities to the
scheduler, simulate the compute fabric in 60 s sub-steps, then re-dispatch
once against the power the schedule actually drew (a single Gauss-Seidel
sweep) and record metrics from that final dispatch.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import agent as agmod
from . import cpn as cpnmod
from . import grid as gridmod
from .agent import CarbonQueue, GridSignals, RewardWeights
from .grid import EdTemplate, GridSpec, PeriodRealization, PrevState
from .scenario import Scenario, realize
from .suc import CommitmentSchedule

SUBSTEP_S = 60.0

TSCO = "TSCO"
CO_OPT = "CO_OPT"
RG_SCHED = "RG_SCHED"
DC_FRAME = "DC_FRAME"
POLICY_KINDS = (TSCO, CO_OPT, RG_SCHED, DC_FRAME)


class RuntimeError_(Exception):
    pass


@dataclass
class PeriodRecord:
    t: int
    gen_power: dict
    lmp: dict
    mci: dict
    cpn_power: dict             # node id -> average MW over the period
    fuel_cost: float
    emissions: float
    curtailment_mwh: float
    shed_mw: float
    soc_mwh: dict
    carbon_queue: float         # level at the end of the period


@dataclass
class JobStats:
    arrived: int = 0
    completed: int = 0
    missed: int = 0
    still_running: int = 0
    tardiness_s: list = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return self.completed / self.arrived if self.arrived else 1.0

    @property
    def mean_tardiness_s(self) -> float:
        return float(np.mean(self.tardiness_s)) if self.tardiness_s else 0.0


@dataclass
class RunResult:
    policy: str
    seed: int
    carbon_price: float
    periods: list
    jobs: JobStats
    operational_cost: float     # fuel + startup/shutdown (+ shed penalty)
    emissions: float            # grid emissions, average-factor accounting
    curtailment_mwh: float
    cpn_energy_mwh: float
    cpn_carbon_t: float         # marginal-intensity accounting of CPN draw
    cpn_energy_cost: float
    carbon_queue_peak: float
    shed_events: int
    total_reward: float

    def total_cost(self, carbon_price=None) -> float:
        lam = self.carbon_price if carbon_price is None else carbon_price
        return self.operational_cost + lam * self.emissions


def write_run_result(result: RunResult, directory):
    """CSV time series plus a JSON summary of totals and job statistics."""
    import os
    os.makedirs(directory, exist_ok=True)
    rows_path = os.path.join(directory, "periods.csv")
    with open(rows_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "fuel_cost", "emissions", "curtailment_mwh",
                    "shed_mw", "carbon_queue", "mean_lmp", "mean_mci",
                    "cpn_mw"])
        for p in result.periods:
            w.writerow([p.t, f"{p.fuel_cost:.6f}", f"{p.emissions:.6f}",
                        f"{p.curtailment_mwh:.6f}", f"{p.shed_mw:.6f}",
                        f"{p.carbon_queue:.6f}",
                        f"{float(np.mean(list(p.lmp.values()))):.6f}",
                        f"{float(np.mean(list(p.mci.values()))):.6f}",
                        f"{sum(p.cpn_power.values()):.6f}"])
    summary = {
        "policy": result.policy, "seed": result.seed,
        "carbon_price": result.carbon_price,
        "operational_cost": result.operational_cost,
        "emissions": result.emissions,
        "curtailment_mwh": result.curtailment_mwh,
        "cpn_energy_mwh": result.cpn_energy_mwh,
        "cpn_carbon_t": result.cpn_carbon_t,
        "total_cost": result.total_cost(),
        "jobs": {"arrived": result.jobs.arrived,
                 "completed": result.jobs.completed,
                 "missed": result.jobs.missed,
                 "success_rate": result.jobs.success_rate,
                 "mean_tardiness_s": result.jobs.mean_tardiness_s},
        "shed_events": result.shed_events,
    }
    with open(os.path.join(directory, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return rows_path


# ---------------------------------------------------------------------------
# static day-ahead signals (for the decoupled baseline)


@dataclass
class StaticSignals:
    """Fixed 24-hour per-node LMP/MCI profile from the day-ahead stage."""

    lmp: list                   # t -> {node id: $/MWh}
    mci: list


def expected_scenario(scenarios: list) -> Scenario:
    """Probability-weighted average of availability and demand; jobs come
    from the highest-probability scenario (ties by id)."""
    res_ids = scenarios[0].res_availability.keys()
    avail = {rid: sum(s.probability * s.res_availability[rid]
                      for s in scenarios) for rid in res_ids}
    demand = {bus: sum(s.probability * s.demand[bus] for s in scenarios)
              for bus in scenarios[0].demand}
    best = max(scenarios, key=lambda s: (s.probability, -s.id))
    return Scenario(id=-1, probability=1.0, res_availability=avail,
                    jobs=best.jobs, demand=demand)


def compute_static_signals(grid: GridSpec, commitment: CommitmentSchedule,
                           scenarios: list, segments: int = 8) -> StaticSignals:
    """Chain per-period dispatches over the expected scenario and freeze the
    resulting prices and marginal intensities."""
    from .suc import cpn_baseload
    exp = expected_scenario(scenarios)
    base = cpn_baseload(grid, exp)
    tpl = EdTemplate(grid, segments)
    prev = gridmod.initial_state(grid)
    node_bus = {n.id: n.bus for n in grid.cpn_nodes}
    lmps, mcis = [], []
    basis = None
    for t in range(grid.horizon):
        real = realize(exp, t + 1)
        real.cpn_demand = dict(base[t])
        sol, out, lp, idx, shed = tpl.solve(
            commitment.column(t, grid), prev, real, basis=basis,
            mci_buses=sorted(set(node_bus.values())))
        basis = out.basis if not shed else None
        lmps.append({nid: sol.lmp[bus] for nid, bus in node_bus.items()})
        mcis.append({nid: sol.mci[bus] for nid, bus in node_bus.items()})
        prev = PrevState(gen_power=sol.gen_power, soc_mwh=sol.soc_mwh)
    return StaticSignals(lmp=lmps, mci=mcis)


# ---------------------------------------------------------------------------
# policies


def rg_schedule(cpn_state, res_mw_per_node: dict) -> int:
    """Greedy rule: run the head task on the feasible node with the most
    co-located renewable headroom; ties go to the lowest node id; defer when
    nothing fits."""
    ready = cpn_state.ready_tasks()
    assert ready, "rg_schedule needs a ready task"
    _, task = ready[0]
    node_ids = sorted(cpn_state.nodes)
    best, best_avail = None, -1.0
    for k, nid in enumerate(node_ids):
        if cpn_state.free_slots(nid) < task.slots:
            continue
        avail = float(res_mw_per_node.get(nid, 0.0))
        if avail > best_avail + 1e-12:
            best, best_avail = k, avail
    return best if best is not None else len(node_ids)


class AgentPolicy:
    """Greedy (or epsilon-soft) action from a trained value network."""

    def __init__(self, net, epsilon: float = 0.0):
        self.net = net
        self.epsilon = epsilon

    def act(self, env, obs, mask, rng) -> int:
        q = agmod.forward(self.net, obs)
        return agmod.select_action(q, mask, self.epsilon, rng)


class RgPolicy:
    def act(self, env, obs, mask, rng) -> int:
        return rg_schedule(env.state, env.node_res_mw())


class RandomPolicy:
    def act(self, env, obs, mask, rng) -> int:
        valid = np.nonzero(mask)[0]
        return int(valid[rng.integers(len(valid))])


# ---------------------------------------------------------------------------
# the environment: one scenario day as a decision process


class RealtimeEnv:
    """Stage-2 loop exposed as an episodic decision process.

    Decision points are (sub-step, ready-task) pairs; between the last
    decision of a sub-step and the next one, the simulator advances 60 s and
    the rewards accrued in between are attributed to the next step() return.
    The grid side runs one dispatch at each period start (its prices and
    marginal intensities feed the state vector), then one corrective
    dispatch after the period's schedule is known; metrics come from the
    corrective one.
    """

    def __init__(self, grid: GridSpec, commitment: CommitmentSchedule,
                 scenario: Scenario, weights: RewardWeights = None,
                 carbon_budget: float = np.inf, static_signals=None,
                 segments: int = 8, record_full: bool = False,
                 ed_template: EdTemplate = None):
        self.grid = grid
        self.commitment = commitment
        self.scenario = scenario
        self.weights = weights or RewardWeights()
        self.carbon_budget = carbon_budget
        self.static = static_signals
        self.segments = segments
        self.record_full = record_full
        self.tpl = ed_template or EdTemplate(grid, segments)
        self.nodes = sorted(grid.cpn_nodes, key=lambda n: n.id)
        self.node_bus = {n.id: n.bus for n in self.nodes}
        self.n_actions = len(self.nodes) + 1
        self.observation_dim = agmod.state_dim(len(self.nodes))
        self.substeps = int(round(grid.period_hours * 3600.0 / SUBSTEP_S))
        total_tasks = sum(len(j.tasks) for jobs in scenario.jobs.values()
                          for j in jobs)
        self.steps_hint = max(total_tasks * 2, 50)

    # -- plumbing ----------------------------------------------------------

    def node_res_mw(self) -> dict:
        """Co-located renewable availability per node for the current period."""
        real = self._real
        out = {}
        for n in self.nodes:
            mw = 0.0
            for r in self.grid.res:
                if r.bus == n.bus:
                    mw += real.res_available.get(r.id, 0.0)
            out[n.id] = mw
        return out

    def _signals(self, sol) -> GridSignals:
        t = self.t
        if self.static is not None:
            lmp = dict(self.static.lmp[t])
            mci = dict(self.static.mci[t])
        else:
            lmp = {nid: sol.lmp[bus] for nid, bus in self.node_bus.items()}
            mci = {nid: sol.mci[bus] for nid, bus in self.node_bus.items()}
        res = self.node_res_mw()
        cap = {n.id: sum(r.capacity_mw for r in self.grid.res
                         if r.bus == n.bus) for n in self.nodes}
        frac = {nid: (res[nid] / cap[nid] if cap[nid] > 0 else 0.0)
                for nid in res}
        soc = float(np.mean([self.prev.soc_mwh[b.id] / b.energy_mwh
                             for b in self.grid.bess])) if self.grid.bess else 0.0
        return GridSignals(lmp=lmp, mci=mci, res_fraction=frac, bess_soc=soc)

    def _mask(self, task) -> np.ndarray:
        mask = np.zeros(self.n_actions, dtype=bool)
        for k, n in enumerate(self.nodes):
            mask[k] = self.state.free_slots(n.id) >= task.slots
        mask[-1] = True  # defer
        return mask

    def _obs(self):
        head = None
        if self._ready_pos < len(self._ready):
            head = self._ready[self._ready_pos]
        obs = agmod.encode_state(self.state, self._sig, self.queue,
                                 (self.t % 24) / 24.0, head_task=head)
        mask = self._mask(head[1]) if head is not None else \
            np.concatenate([np.zeros(len(self.nodes), dtype=bool), [True]])
        return obs, mask

    # -- period machinery ---------------------------------------------------

    def _begin_period(self):
        t = self.t
        self._real = realize(self.scenario, t + 1)
        self._real.cpn_demand = dict(self._cpn_estimate)
        mci_buses = sorted(set(self.node_bus.values()))
        sol, out, lp, idx, shed = self.tpl.solve(
            self.commitment.column(t, self.grid), self.prev, self._real,
            basis=self._basis, mci_buses=mci_buses)
        self._basis = out.basis if not shed else None
        if shed:
            self.shed_events += 1
        self._sig = self._signals(sol)
        self._sub = 0
        # inject this period's arrivals
        for node in self.nodes:
            for job in self.scenario.jobs.get(node.id, ()):
                if job.arrival == t:
                    self.state.add_job(job)
        self._refresh_ready()

    def _refresh_ready(self):
        self._ready = self.state.ready_tasks()
        self._ready_pos = 0

    def _advance_substep(self) -> float:
        """Run 60 s of simulation; returns the reward accrued."""
        energy_before = dict(self.state.energy_mwh)
        events = self.state.advance(SUBSTEP_S)
        completed = sum(1 for e in events if e.kind == "job_done")
        missed = sum(1 for e in events if e.kind == "miss")
        energy_cost = 0.0
        carbon = 0.0
        for n in self.nodes:
            de = self.state.energy_mwh[n.id] - energy_before[n.id]
            energy_cost += de * self._sig.lmp[n.id]
            carbon += de * self._sig.mci[n.id]
            self._period_energy[n.id] += de
        self.cpn_energy_cost += energy_cost
        self.cpn_carbon += carbon
        reward = agmod.compute_reward(completed, missed, energy_cost, carbon,
                                      self.queue, self.weights)
        self.queue = agmod.update_carbon_queue(self.queue, carbon)
        self.queue_peak = max(self.queue_peak, self.queue.level)
        self._sub += 1
        self._refresh_ready()
        return reward.total

    def _end_period(self):
        t = self.t
        avg_power = {nid: self._period_energy[nid] / self.grid.period_hours
                     for nid in self._period_energy}
        cpn_by_bus = {}
        for nid, mw in avg_power.items():
            bus = self.node_bus[nid]
            cpn_by_bus[bus] = cpn_by_bus.get(bus, 0.0) + mw
        real2 = realize(self.scenario, t + 1)
        real2.cpn_demand = cpn_by_bus
        mci_buses = None if self.record_full else []
        sol, out, lp, idx, shed = self.tpl.solve(
            self.commitment.column(t, self.grid), self.prev, real2,
            basis=self._basis, mci_buses=mci_buses)
        if shed:
            self.shed_events += 1
            self._basis = None
        else:
            self._basis = out.basis
        self.fuel_cost += sol.fuel_cost
        self.emissions += sol.emissions
        self.curtailment += sol.curtailment_mwh
        self.records.append(PeriodRecord(
            t=t, gen_power=sol.gen_power,
            lmp=dict(sol.lmp), mci=dict(sol.mci), cpn_power=avg_power,
            fuel_cost=sol.fuel_cost, emissions=sol.emissions,
            curtailment_mwh=sol.curtailment_mwh,
            shed_mw=sum(sol.shed_mw.values()),
            soc_mwh=dict(sol.soc_mwh), carbon_queue=self.queue.level))
        self.prev = PrevState(gen_power=sol.gen_power, soc_mwh=sol.soc_mwh)
        self._cpn_estimate = cpn_by_bus
        self._period_energy = {n.id: 0.0 for n in self.nodes}

    # -- episode interface ---------------------------------------------------

    def reset(self):
        g = self.grid
        self.state = cpnmod.CpnState(self.nodes,
                                     period_seconds=g.period_hours * 3600.0)
        self.prev = gridmod.initial_state(g)
        total_substeps = g.horizon * self.substeps
        rate = (self.carbon_budget / total_substeps
                if np.isfinite(self.carbon_budget) else np.inf)
        self.queue = CarbonQueue(level=0.0, budget_rate=rate)
        self.queue_peak = 0.0
        self.records = []
        self.fuel_cost = 0.0
        self.emissions = 0.0
        self.curtailment = 0.0
        self.cpn_energy_cost = 0.0
        self.cpn_carbon = 0.0
        self.shed_events = 0
        self.t = 0
        self._basis = None
        self._cpn_estimate = {n.bus: n.idle_mw for n in self.nodes}
        self._period_energy = {n.id: 0.0 for n in self.nodes}
        self._pending_reward = 0.0
        self._done = False
        self._begin_period()
        self._roll_to_decision()
        obs, mask = self._obs()
        return obs, mask

    def _roll_to_decision(self):
        """Advance sub-steps and periods until a ready task awaits a decision
        or the horizon ends; accrues rewards into the pending bucket."""
        while True:
            if self._ready_pos < len(self._ready):
                return
            if self._sub < self.substeps:
                self._pending_reward += self._advance_substep()
                continue
            self._end_period()
            self.t += 1
            if self.t >= self.grid.horizon:
                self._done = True
                return
            self._begin_period()

    def step(self, action: int):
        if self._done:
            raise RuntimeError_("episode is over")
        job_id, task = self._ready[self._ready_pos]
        if action < len(self.nodes):
            node = self.nodes[action]
            self.state.apply_assignment(job_id, task, node.id)
        self._ready_pos += 1
        reward = self._pending_reward
        self._pending_reward = 0.0
        self._roll_to_decision()
        obs, mask = self._obs()
        if self._done:
            info = self._final_info()
            info["tail_reward"] = self._pending_reward
            self._pending_reward = 0.0
            return obs, reward, True, mask, info
        return obs, reward, False, mask, {}

    def run_policy(self, policy, rng):
        """Roll one full episode under a fixed policy; returns total reward."""
        obs, mask = self.reset()
        total = 0.0
        while not self._done:
            a = policy.act(self, obs, mask, rng)
            obs, r, done, mask, info = self.step(a)
            total += r
            if done:
                total += info.get("tail_reward", 0.0)
        total += self._drain_if_no_decisions()
        return total

    def _drain_if_no_decisions(self):
        # an episode with zero ready tasks never enters step(); finish it here
        total = 0.0
        while not self._done:
            self._roll_to_decision()
            if self._ready_pos < len(self._ready):
                raise RuntimeError_("decision appeared while draining")
        total += self._pending_reward
        self._pending_reward = 0.0
        return total

    def _final_info(self):
        counts = self.state.job_counts()
        return {"success_rate":
                (counts[cpnmod.COMPLETED] / max(1, len(self.state.jobs))
                 if self.state.jobs else 1.0),
                "emissions": self.emissions}

    def job_stats(self) -> JobStats:
        counts = self.state.job_counts()
        return JobStats(arrived=len(self.state.jobs),
                        completed=counts[cpnmod.COMPLETED],
                        missed=counts[cpnmod.MISSED],
                        still_running=counts[cpnmod.RUNNING],
                        tardiness_s=self.state.tardiness_list())


# ---------------------------------------------------------------------------
# entry points


def run_realtime(grid: GridSpec, commitment: CommitmentSchedule,
                 policy, scenario: Scenario, seed: int,
                 weights: RewardWeights = None,
                 carbon_budget: float = np.inf, static_signals=None,
                 segments: int = 8, record_full: bool = True,
                 policy_name: str = TSCO,
                 ed_template: EdTemplate = None) -> RunResult:
    """One day of coupled operation; deterministic per (inputs, seed)."""
    env = RealtimeEnv(grid, commitment, scenario, weights=weights,
                      carbon_budget=carbon_budget,
                      static_signals=static_signals, segments=segments,
                      record_full=record_full, ed_template=ed_template)
    rng = np.random.default_rng(seed)
    total_reward = env.run_policy(policy, rng)
    jobs = env.job_stats()
    commitment_cost = commitment.commitment_cost(grid)
    shed_cost = sum(p.shed_mw for p in env.records) * gridmod.SHED_PRICE \
        * grid.period_hours
    return RunResult(
        policy=policy_name, seed=seed, carbon_price=grid.carbon_price,
        periods=env.records, jobs=jobs,
        operational_cost=env.fuel_cost + commitment_cost + shed_cost,
        emissions=env.emissions, curtailment_mwh=env.curtailment,
        cpn_energy_mwh=sum(env.state.energy_mwh.values()),
        cpn_carbon_t=env.cpn_carbon, cpn_energy_cost=env.cpn_energy_cost,
        carbon_queue_peak=env.queue_peak, shed_events=env.shed_events,
        total_reward=total_reward)


def run_decoupled(grid: GridSpec, commitment: CommitmentSchedule,
                  policy, scenarios: list, scenario: Scenario, seed: int,
                  weights: RewardWeights = None,
                  carbon_budget: float = np.inf, segments: int = 8,
                  record_full: bool = True,
                  static_signals: StaticSignals = None) -> RunResult:
    """Decoupled-baseline run: day-ahead signals are frozen from the
    scenario-expected dispatch, the scheduler sees only those, and the grid
    still physically dispatches against the actual scenario."""
    if static_signals is None:
        static_signals = compute_static_signals(grid, commitment, scenarios,
                                                segments)
    return run_realtime(grid, commitment, policy, scenario, seed,
                        weights=weights, carbon_budget=carbon_budget,
                        static_signals=static_signals, segments=segments,
                        record_full=record_full, policy_name=DC_FRAME)
