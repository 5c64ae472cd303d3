"""Computing-power-network model and discrete-event simulator.

Nodes have a linear power curve between idle and peak driven by slot
utilization; jobs are DAGs of sub-tasks with precedence edges, hard
deadlines, and integral FLOP workloads.  Compute rates and workloads are kept
integral so the work-conservation accounting is exact in float64.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

RUNNING = "running"
COMPLETED = "completed"
MISSED = "missed"


class CpnError(Exception):
    pass


class CyclicDependency(CpnError):
    pass


class NonPositiveWorkload(CpnError):
    pass


class DeadlineBeforeArrival(CpnError):
    pass


class CapacityExceeded(CpnError):
    """An assignment asked for more slots than the node has free."""


@dataclass(frozen=True)
class CpnNode:
    id: int
    bus: int
    compute_flops: float       # aggregate rate, FLOP per second
    slots: int                 # concurrency / utilization unit
    idle_mw: float
    peak_mw: float

    def validate(self):
        if self.peak_mw < self.idle_mw or self.idle_mw < 0:
            raise CpnError(f"node {self.id}: need peak >= idle >= 0")
        if self.compute_flops <= 0 or self.slots <= 0:
            raise CpnError(f"node {self.id}: capacity and slots must be positive")


@dataclass(frozen=True)
class SubTask:
    id: int
    workload: float            # FLOP, integral and positive
    slots: int                 # processing units reserved while running


@dataclass
class Job:
    id: int
    arrival: int               # period index (0-based)
    deadline: int              # period index, must exceed arrival
    tasks: list
    edges: list                # (predecessor task id, successor task id)


def validate_job(job: Job):
    """Acyclicity, positive workloads, deadline after arrival."""
    if job.deadline <= job.arrival:
        raise DeadlineBeforeArrival(
            f"job {job.id}: deadline {job.deadline} not after arrival {job.arrival}")
    ids = [t.id for t in job.tasks]
    if len(set(ids)) != len(ids):
        raise CpnError(f"job {job.id}: duplicate task ids")
    for t in job.tasks:
        if t.workload <= 0:
            raise NonPositiveWorkload(f"job {job.id} task {t.id}")
        if t.slots < 1:
            raise CpnError(f"job {job.id} task {t.id}: slots must be >= 1")
    known = set(ids)
    succ = {i: [] for i in ids}
    indeg = {i: 0 for i in ids}
    for a, b in job.edges:
        if a not in known or b not in known:
            raise CpnError(f"job {job.id}: edge ({a}, {b}) references unknown task")
        succ[a].append(b)
        indeg[b] += 1
    frontier = [i for i in ids if indeg[i] == 0]
    seen = 0
    while frontier:
        i = frontier.pop()
        seen += 1
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                frontier.append(j)
    if seen != len(ids):
        raise CyclicDependency(f"job {job.id}")


def execution_time(task: SubTask, node: CpnNode) -> float:
    """Seconds to run the task at the node's full compute rate."""
    return task.workload / node.compute_flops


def node_power(node: CpnNode, busy_slots: int) -> float:
    """MW drawn at the given occupancy: idle + (peak-idle) * utilization."""
    assert 0 <= busy_slots <= node.slots
    return node.idle_mw + (node.peak_mw - node.idle_mw) * (busy_slots / node.slots)


@dataclass
class Event:
    time_s: float
    kind: str                  # arrival | start | completion | job_done | miss
    job_id: int | None = None
    task_id: int | None = None
    node_id: int | None = None


@dataclass
class _JobRecord:
    job: Job
    status: str
    arrival_s: float
    deadline_s: float
    done: set = field(default_factory=set)
    scheduled: set = field(default_factory=set)
    completion_s: float | None = None
    missed_flop: float = 0.0


@dataclass
class _Running:
    job_id: int
    task: SubTask
    node_id: int
    remaining: float


class CpnState:
    """Single-owner mutable simulation state.

    Capacity accounting is by slots; every running task progresses at its
    node's full FLOP rate.  Jobs past their deadline with unfinished tasks
    are marked missed and their outstanding tasks are cancelled, freeing
    slots; the cancelled work is tallied so arrived = completed + in-flight +
    missed FLOP at all times.
    """

    def __init__(self, nodes: list, period_seconds: float = 3600.0):
        self.nodes = {n.id: n for n in nodes}
        for n in nodes:
            n.validate()
        self.period_seconds = period_seconds
        self.busy = {n.id: 0 for n in nodes}
        self.running: list[_Running] = []
        self.jobs: dict[int, _JobRecord] = {}
        self.clock_s = 0.0
        self.events: list[Event] = []
        self.energy_mwh = {n.id: 0.0 for n in nodes}
        self.completed_flop = 0.0
        self.arrived_flop = 0.0

    # -- bookkeeping ------------------------------------------------------

    def add_job(self, job: Job):
        validate_job(job)
        rec = _JobRecord(job=job, status=RUNNING,
                         arrival_s=job.arrival * self.period_seconds,
                         deadline_s=job.deadline * self.period_seconds)
        self.jobs[job.id] = rec
        self.arrived_flop += sum(t.workload for t in job.tasks)
        self.events.append(Event(self.clock_s, "arrival", job.id))

    def free_slots(self, node_id: int) -> int:
        return self.nodes[node_id].slots - self.busy[node_id]

    def _predecessors_done(self, rec: _JobRecord, task_id: int) -> bool:
        return all(a in rec.done for a, b in rec.job.edges if b == task_id)

    def ready_tasks(self) -> list:
        """(job_id, SubTask) pairs whose predecessors are complete, ordered
        by earliest job deadline, then job id, then task id."""
        out = []
        for rec in self.jobs.values():
            if rec.status != RUNNING:
                continue
            for t in rec.job.tasks:
                if t.id in rec.done or t.id in rec.scheduled:
                    continue
                if self._predecessors_done(rec, t.id):
                    out.append((rec.deadline_s, rec.job.id, t.id, t))
        out.sort(key=lambda r: (r[0], r[1], r[2]))
        return [(job_id, task) for _, job_id, _, task in out]

    def apply_assignment(self, job_id: int, task: SubTask, node_id: int):
        """Reserve slots and start the task; no state change on rejection."""
        if self.free_slots(node_id) < task.slots:
            raise CapacityExceeded(
                f"node {node_id}: {task.slots} slots requested, "
                f"{self.free_slots(node_id)} free")
        rec = self.jobs[job_id]
        self.busy[node_id] += task.slots
        rec.scheduled.add(task.id)
        self.running.append(_Running(job_id, task, node_id, float(task.workload)))
        self.events.append(Event(self.clock_s, "start", job_id, task.id, node_id))

    # -- time -------------------------------------------------------------

    def advance(self, dt: float) -> list:
        """Run dt seconds; returns the events raised at the step boundary.

        Energy uses the occupancy at the start of the step (piecewise
        constant utilization).  Completions, readiness updates, and deadline
        misses all resolve at the boundary.
        """
        assert dt > 0
        for nid, node in self.nodes.items():
            self.energy_mwh[nid] += node_power(node, self.busy[nid]) * dt / 3600.0
        self.clock_s += dt
        new_events = []
        still = []
        for r in self.running:
            node = self.nodes[r.node_id]
            work = node.compute_flops * dt
            done = min(work, r.remaining)
            r.remaining -= done
            self.completed_flop += done
            if r.remaining <= 0.0:
                self.busy[r.node_id] -= r.task.slots
                rec = self.jobs[r.job_id]
                rec.done.add(r.task.id)
                ev = Event(self.clock_s, "completion", r.job_id, r.task.id, r.node_id)
                new_events.append(ev)
                if len(rec.done) == len(rec.job.tasks) and rec.status == RUNNING:
                    rec.status = COMPLETED
                    rec.completion_s = self.clock_s
                    new_events.append(Event(self.clock_s, "job_done", r.job_id))
            else:
                still.append(r)
        self.running = still
        # deadline misses: cancel outstanding work, free slots
        for rec in self.jobs.values():
            if rec.status == RUNNING and self.clock_s >= rec.deadline_s:
                rec.status = MISSED
                keep = []
                for r in self.running:
                    if r.job_id == rec.job.id:
                        self.busy[r.node_id] -= r.task.slots
                        rec.missed_flop += r.remaining
                    else:
                        keep.append(r)
                self.running = keep
                for t in rec.job.tasks:
                    if t.id not in rec.done and t.id not in rec.scheduled:
                        rec.missed_flop += t.workload
                new_events.append(Event(self.clock_s, "miss", rec.job.id))
        self.events.extend(new_events)
        return new_events

    # -- accounting -------------------------------------------------------

    def inflight_flop(self) -> float:
        live = sum(r.remaining for r in self.running)
        for rec in self.jobs.values():
            if rec.status != RUNNING:
                continue
            for t in rec.job.tasks:
                if t.id not in rec.done and t.id not in rec.scheduled:
                    live += t.workload
        return live

    def missed_flop(self) -> float:
        return sum(rec.missed_flop for rec in self.jobs.values())

    def job_counts(self) -> dict:
        c = {RUNNING: 0, COMPLETED: 0, MISSED: 0}
        for rec in self.jobs.values():
            c[rec.status] += 1
        return c

    def tardiness_list(self) -> list:
        """Seconds late for every job with a known completion (0 if on time).

        Missed jobs never finish here (their tasks are cancelled), so they
        are censored at the current clock.
        """
        out = []
        for rec in self.jobs.values():
            if rec.status == COMPLETED:
                out.append(max(0.0, rec.completion_s - rec.deadline_s))
            elif rec.status == MISSED:
                out.append(max(0.0, self.clock_s - rec.deadline_s))
        return out


def write_event_log(state: CpnState, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "event", "job", "task", "node"])
        for ev in state.events:
            w.writerow([f"{ev.time_s:.3f}", ev.kind,
                        "" if ev.job_id is None else ev.job_id,
                        "" if ev.task_id is None else ev.task_id,
                        "" if ev.node_id is None else ev.node_id])


# ---------------------------------------------------------------------------
# workload files


def job_to_dict(job: Job) -> dict:
    return {"id": job.id, "arrival": job.arrival, "deadline": job.deadline,
            "tasks": [{"id": t.id, "workload": t.workload, "slots": t.slots}
                      for t in job.tasks],
            "edges": [[a, b] for a, b in job.edges]}


def job_from_dict(d: dict) -> Job:
    job = Job(id=int(d["id"]), arrival=int(d["arrival"]),
              deadline=int(d["deadline"]),
              tasks=[SubTask(id=int(t["id"]), workload=float(t["workload"]),
                             slots=int(t["slots"])) for t in d["tasks"]],
              edges=[(int(a), int(b)) for a, b in d["edges"]])
    validate_job(job)
    return job
