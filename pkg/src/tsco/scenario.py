"""Seeded synthetic 24-hour scenarios of renewable availability and job load.

Solar sites follow a clipped half-sine daylight window with a per-day
lognormal multiplier; wind follows a discrete mean-reverting walk pulled
toward a capacity-factor target; jobs arrive as per-node Poisson counts with
layered random DAGs.  Everything is driven by one PCG64 stream per scenario
set, so a (seed, config, grid) triple always regenerates the same set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import cpn
from .grid import GridSpec


class ScenarioError(Exception):
    pass


class InvalidConfig(ScenarioError):
    pass


class IndexOutOfRange(ScenarioError):
    pass


@dataclass
class ScenarioConfig:
    seed: int = 0
    n_scenarios: int = 10
    horizon: int = 24
    period_hours: float = 1.0
    # solar: daylight window in period indices, noon peak as a fraction of
    # capacity, day-to-day lognormal sigma
    solar_sunrise: int = 6
    solar_sunset: int = 19
    solar_peak_fraction: float = 0.85
    solar_sigma: float = 0.25
    # wind: discrete mean reversion toward cf * capacity
    wind_reversion: float = 0.35
    wind_volatility: float = 0.18   # fraction of capacity per step
    wind_capacity_factor: float = 0.45
    # workload
    arrival_rate: float = 0.45      # jobs per CPN node per period
    dag_width: tuple = (1, 3)
    dag_depth: tuple = (1, 4)
    workload_mean_flop: float = 6.0e15
    workload_sigma: float = 0.6
    subtask_slots: tuple = (1, 4)
    deadline_slack: tuple = (2, 8)  # periods beyond arrival
    demand_sigma: float = 0.0       # optional jitter on base demand

    def validate(self):
        if self.n_scenarios < 1:
            raise InvalidConfig("n_scenarios must be >= 1")
        if self.horizon < 1:
            raise InvalidConfig("horizon must be >= 1")
        if not (0 <= self.solar_sunrise < self.solar_sunset <= self.horizon):
            raise InvalidConfig("need 0 <= sunrise < sunset <= horizon")
        for name in ("solar_peak_fraction", "wind_reversion",
                     "wind_volatility", "wind_capacity_factor",
                     "arrival_rate", "workload_mean_flop"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        for name in ("dag_width", "dag_depth", "subtask_slots",
                     "deadline_slack"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise InvalidConfig(f"{name} must satisfy 1 <= lo <= hi")


@dataclass
class Scenario:
    id: int
    probability: float
    res_availability: dict        # res id -> np.ndarray (T,)
    jobs: dict                    # cpn node id -> list[Job]
    demand: dict                  # bus id -> np.ndarray (T,)

    def all_jobs(self):
        out = []
        for node_id in sorted(self.jobs):
            out.extend(self.jobs[node_id])
        return out


def _solar_series(rng, cfg: ScenarioConfig, capacity: float) -> np.ndarray:
    T = cfg.horizon
    series = np.zeros(T)
    day = np.exp(rng.normal(-0.5 * cfg.solar_sigma ** 2, cfg.solar_sigma))
    span = cfg.solar_sunset - cfg.solar_sunrise
    for t in range(cfg.solar_sunrise, cfg.solar_sunset):
        phase = (t - cfg.solar_sunrise + 0.5) / span
        series[t] = capacity * cfg.solar_peak_fraction * np.sin(np.pi * phase) * day
    return np.clip(series, 0.0, capacity)


def _wind_series(rng, cfg: ScenarioConfig, capacity: float) -> np.ndarray:
    T = cfg.horizon
    target = cfg.wind_capacity_factor * capacity
    series = np.empty(T)
    level = target * float(np.exp(rng.normal(0.0, 0.3)))
    for t in range(T):
        level = (level + cfg.wind_reversion * (target - level)
                 + cfg.wind_volatility * capacity * rng.standard_normal())
        level = float(np.clip(level, 0.0, capacity))
        series[t] = level
    return series


def _sample_dag(rng, cfg: ScenarioConfig, job_id: int, arrival: int) -> cpn.Job:
    depth = int(rng.integers(cfg.dag_depth[0], cfg.dag_depth[1] + 1))
    layers = []
    tid = 0
    tasks, edges = [], []
    for _ in range(depth):
        width = int(rng.integers(cfg.dag_width[0], cfg.dag_width[1] + 1))
        layer = []
        for _ in range(width):
            w = float(np.round(cfg.workload_mean_flop
                               * np.exp(rng.normal(-0.5 * cfg.workload_sigma ** 2,
                                                   cfg.workload_sigma))))
            w = max(w, 1.0)
            slots = int(rng.integers(cfg.subtask_slots[0],
                                     cfg.subtask_slots[1] + 1))
            tasks.append(cpn.SubTask(id=tid, workload=w, slots=slots))
            layer.append(tid)
            tid += 1
        layers.append(layer)
    for k in range(1, len(layers)):
        for succ in layers[k]:
            pred = int(rng.choice(layers[k - 1]))
            edges.append((pred, succ))
            for other in layers[k - 1]:
                if other != pred and rng.random() < 0.25:
                    edges.append((other, succ))
    slack = int(rng.integers(cfg.deadline_slack[0], cfg.deadline_slack[1] + 1))
    deadline = min(arrival + slack, cfg.horizon)
    if deadline <= arrival:
        deadline = arrival + 1
    job = cpn.Job(id=job_id, arrival=arrival, deadline=deadline,
                  tasks=tasks, edges=edges)
    cpn.validate_job(job)
    return job


def generate_scenarios(cfg: ScenarioConfig, grid: GridSpec) -> list:
    """Uniform-probability scenario set for the grid's RES and CPN fleet."""
    cfg.validate()
    if not grid.res:
        raise InvalidConfig("grid has no RES generators")
    if cfg.horizon != grid.horizon:
        raise InvalidConfig(
            f"config horizon {cfg.horizon} != grid horizon {grid.horizon}")
    rng = np.random.default_rng(np.random.PCG64(cfg.seed))
    out = []
    job_counter = 0
    for k in range(cfg.n_scenarios):
        avail = {}
        for r in grid.res:
            if r.kind == "solar":
                avail[r.id] = _solar_series(rng, cfg, r.capacity_mw)
            else:
                avail[r.id] = _wind_series(rng, cfg, r.capacity_mw)
        jobs = {}
        for node in grid.cpn_nodes:
            node_jobs = []
            for t in range(cfg.horizon):
                for _ in range(int(rng.poisson(cfg.arrival_rate))):
                    node_jobs.append(_sample_dag(rng, cfg, job_counter, t))
                    job_counter += 1
            jobs[node.id] = node_jobs
        demand = {}
        for b in grid.buses:
            base = np.asarray(b.demand, dtype=float)
            if cfg.demand_sigma > 0:
                base = base * np.exp(rng.normal(-0.5 * cfg.demand_sigma ** 2,
                                                cfg.demand_sigma, len(base)))
            demand[b.id] = base
        out.append(Scenario(id=k, probability=1.0 / cfg.n_scenarios,
                            res_availability=avail, jobs=jobs, demand=demand))
    return out


def realize(scenario: Scenario, t: int):
    """Slice one period (1-based t) into a PeriodRealization.

    The CPN demand field starts at zero; the runtime fills it once tasks are
    actually scheduled.
    """
    from .grid import PeriodRealization
    T = len(next(iter(scenario.demand.values())))
    if not (1 <= t <= T):
        raise IndexOutOfRange(f"period {t} outside 1..{T}")
    return PeriodRealization(
        res_available={rid: float(series[t - 1])
                       for rid, series in scenario.res_availability.items()},
        demand={bus: float(series[t - 1])
                for bus, series in scenario.demand.items()},
        cpn_demand={})


# ---------------------------------------------------------------------------
# serialization


def scenarios_to_json(scenarios: list, path):
    doc = []
    for s in scenarios:
        doc.append({
            "id": s.id,
            "probability": s.probability,
            "res_availability": {k: list(map(float, v))
                                 for k, v in s.res_availability.items()},
            "jobs": {str(nid): [cpn.job_to_dict(j) for j in jobs]
                     for nid, jobs in s.jobs.items()},
            "demand": {str(bus): list(map(float, v))
                       for bus, v in s.demand.items()},
        })
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def scenarios_from_json(path) -> list:
    with open(path) as fh:
        doc = json.load(fh)
    out = []
    for d in doc:
        out.append(Scenario(
            id=int(d["id"]), probability=float(d["probability"]),
            res_availability={k: np.asarray(v, dtype=float)
                              for k, v in d["res_availability"].items()},
            jobs={int(nid): [cpn.job_from_dict(j) for j in jobs]
                  for nid, jobs in d["jobs"].items()},
            demand={int(bus): np.asarray(v, dtype=float)
                    for bus, v in d["demand"].items()}))
    return out


def scenario_fingerprint(scenarios: list) -> str:
    """Stable content hash, used for cache keys."""
    import hashlib
    h = hashlib.sha256()
    for s in scenarios:
        h.update(str(s.id).encode())
        h.update(np.float64(s.probability).tobytes())
        for rid in sorted(s.res_availability):
            h.update(rid.encode())
            h.update(np.ascontiguousarray(s.res_availability[rid]).tobytes())
        for nid in sorted(s.jobs):
            for j in s.jobs[nid]:
                h.update(json.dumps(cpn.job_to_dict(j), sort_keys=True).encode())
        for bus in sorted(s.demand):
            h.update(np.ascontiguousarray(s.demand[bus]).tobytes())
    return h.hexdigest()[:16]
