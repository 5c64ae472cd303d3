"""Value-network task scheduler: state encoding, masked epsilon-greedy
action selection, a carbon virtual queue, and a small fully connected
Q-network trained by analytic backpropagation against a target network.

Everything is float64 and seeded; a fixed seed reproduces the training log
bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

# normalization constants for the state encoding (documented here, used
# nowhere else)
WORKLOAD_NORM = 2.0e16      # FLOP
SLOTS_NORM = 8.0
SLACK_NORM_S = 86400.0      # deadline slack, seconds
BACKLOG_NORM_H = 4.0        # per-node backlog hours
LMP_NORM = 200.0            # $/MWh
MCI_NORM = 1.0              # tCO2/MWh
QUEUE_NORM = 50.0           # tCO2


class AgentError(Exception):
    pass


class MissingSignal(AgentError):
    pass


class NonFiniteLoss(AgentError):
    pass


@dataclass(frozen=True)
class CarbonQueue:
    """Virtual queue tracking cumulative overrun of the carbon budget rate."""

    level: float = 0.0          # tCO2, never negative
    budget_rate: float = np.inf  # tCO2 allowed per step


def update_carbon_queue(q: CarbonQueue, carbon: float) -> CarbonQueue:
    """Q <- max(0, Q + carbon - budget_rate)."""
    assert carbon >= 0
    rate = 0.0 if not np.isfinite(q.budget_rate) else q.budget_rate
    if not np.isfinite(q.budget_rate):
        return replace(q, level=0.0)
    return replace(q, level=max(0.0, q.level + carbon - rate))


@dataclass
class GridSignals:
    """Per-CPN-node view of the grid used by the scheduler."""

    lmp: dict                   # node id -> $/MWh at the host bus
    mci: dict                   # node id -> tCO2/MWh at the host bus
    res_fraction: dict          # node id -> co-located availability / capacity
    bess_soc: float             # aggregate state of charge, fraction


def state_dim(n_nodes: int) -> int:
    return 8 + 6 * n_nodes


def encode_state(cpn_state, signals: GridSignals, queue: CarbonQueue,
                 day_fraction: float, head_task=None) -> np.ndarray:
    """Fixed-length feature vector.

    ``head_task`` is the (job_id, SubTask) pair being decided, or None for an
    empty queue (zeroed task block plus the empty flag).  Node order follows
    the CpnState's node table.
    """
    nodes = list(cpn_state.nodes.values())
    vec = np.zeros(state_dim(len(nodes)))
    k = 0
    if head_task is None:
        vec[k + 3] = 1.0  # empty-queue flag
    else:
        job_id, task = head_task
        rec = cpn_state.jobs[job_id]
        vec[k] = min(task.workload / WORKLOAD_NORM, 1.0)
        vec[k + 1] = min(task.slots / SLOTS_NORM, 1.0)
        slack = max(rec.deadline_s - cpn_state.clock_s, 0.0)
        vec[k + 2] = min(slack / SLACK_NORM_S, 1.0)
    k += 4
    for n in nodes:
        busy = cpn_state.busy[n.id]
        backlog_h = sum(r.remaining for r in cpn_state.running
                        if r.node_id == n.id) / n.compute_flops / 3600.0
        vec[k] = busy / n.slots
        vec[k + 1] = cpn_state.free_slots(n.id) / n.slots
        vec[k + 2] = min(backlog_h / BACKLOG_NORM_H, 1.0)
        k += 3
    for n in nodes:
        try:
            lmp = signals.lmp[n.id]
            mci = signals.mci[n.id]
        except KeyError:
            raise MissingSignal(f"no grid signals for node {n.id}") from None
        vec[k] = float(np.clip(lmp / LMP_NORM, -1.0, 1.0))
        vec[k + 1] = float(np.clip(mci / MCI_NORM, 0.0, 1.0))
        k += 2
    for n in nodes:
        vec[k] = float(np.clip(signals.res_fraction.get(n.id, 0.0), 0.0, 1.0))
        k += 1
    vec[k] = float(np.clip(signals.bess_soc, 0.0, 1.0))
    level = 0.0 if not np.isfinite(queue.level) else queue.level
    vec[k + 1] = float(np.clip(level / QUEUE_NORM, 0.0, 2.0))
    vec[k + 2] = np.sin(2.0 * np.pi * day_fraction)
    vec[k + 3] = np.cos(2.0 * np.pi * day_fraction)
    return vec


# ---------------------------------------------------------------------------
# reward


@dataclass
class RewardWeights:
    revenue: float = 1.0
    cost: float = 1.0
    carbon: float = 1.0
    deadline: float = 10.0
    lyapunov: float = 0.01
    revenue_per_job: float = 10.0


@dataclass
class RewardBreakdown:
    revenue: float
    energy_cost: float
    carbon: float
    deadline_penalty: float
    lyapunov: float

    @property
    def total(self) -> float:
        return (self.revenue - self.energy_cost - self.carbon
                - self.deadline_penalty - self.lyapunov)


def compute_reward(completed_jobs: int, missed_jobs: int, energy_cost: float,
                   carbon: float, queue: CarbonQueue,
                   w: RewardWeights) -> RewardBreakdown:
    """Weighted reward for one step.

    Revenue for finished jobs, minus the electricity bill (node energy priced
    at the host-bus LMP), the carbon mass (node energy times host-bus MCI),
    the deadline penalty, and the queue-scaled carbon drift term.
    """
    level = 0.0 if not np.isfinite(queue.level) else queue.level
    return RewardBreakdown(
        revenue=w.revenue * w.revenue_per_job * completed_jobs,
        energy_cost=w.cost * energy_cost,
        carbon=w.carbon * carbon,
        deadline_penalty=w.deadline * missed_jobs,
        lyapunov=w.lyapunov * level * carbon)


# ---------------------------------------------------------------------------
# network


@dataclass
class QNetwork:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def input_dim(self):
        return self.w1.shape[1]

    @property
    def n_actions(self):
        return self.w3.shape[0]

    def copy(self) -> "QNetwork":
        return QNetwork(self.w1.copy(), self.b1.copy(), self.w2.copy(),
                        self.b2.copy(), self.w3.copy(), self.b3.copy())

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


def init_network(input_dim: int, n_actions: int, hidden: int = 64,
                 seed: int = 0) -> QNetwork:
    rng = np.random.default_rng(seed)

    def he(rows, cols):
        return rng.normal(0.0, np.sqrt(2.0 / cols), (rows, cols))

    return QNetwork(w1=he(hidden, input_dim), b1=np.zeros(hidden),
                    w2=he(hidden, hidden), b2=np.zeros(hidden),
                    w3=he(n_actions, hidden), b3=np.zeros(n_actions))


def forward(net: QNetwork, s: np.ndarray) -> np.ndarray:
    """Q-values for one state."""
    if s.shape != (net.input_dim,):
        raise AgentError(
            f"state dim {s.shape} does not match network {net.input_dim}")
    h1 = np.maximum(net.w1 @ s + net.b1, 0.0)
    h2 = np.maximum(net.w2 @ h1 + net.b2, 0.0)
    return net.w3 @ h2 + net.b3


def forward_batch(net: QNetwork, s: np.ndarray) -> np.ndarray:
    h1 = np.maximum(s @ net.w1.T + net.b1, 0.0)
    h2 = np.maximum(h1 @ net.w2.T + net.b2, 0.0)
    return h2 @ net.w3.T + net.b3


def select_action(qvalues: np.ndarray, mask: np.ndarray, epsilon: float,
                  rng) -> int:
    """Epsilon-greedy over valid actions; greedy ties go to the lowest index."""
    valid = np.nonzero(mask)[0]
    assert len(valid) > 0, "no valid action (defer must always be valid)"
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(valid[rng.integers(len(valid))])
    q = np.where(mask, qvalues, -np.inf)
    return int(np.argmax(q))


# ---------------------------------------------------------------------------
# replay and training


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s2: np.ndarray
    done: bool
    mask2: np.ndarray


class ReplayBuffer:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.data: list = []
        self.pos = 0

    def push(self, tr: Transition):
        if len(self.data) < self.capacity:
            self.data.append(tr)
        else:
            self.data[self.pos] = tr
        self.pos = (self.pos + 1) % self.capacity

    def sample(self, batch_size: int, rng) -> list:
        idx = rng.integers(len(self.data), size=batch_size)
        return [self.data[i] for i in idx]

    def __len__(self):
        return len(self.data)


def train_step(net: QNetwork, target: QNetwork, batch: list, gamma: float,
               lr: float) -> float:
    """One SGD step on the squared TD error of the taken actions.

    Target: r + gamma * max over valid a' of targetQ(s', a'), zero future
    term on terminal transitions.  Returns the pre-update loss.
    """
    B = len(batch)
    s = np.stack([tr.s for tr in batch])
    a = np.array([tr.a for tr in batch])
    r = np.array([tr.r for tr in batch])
    done = np.array([tr.done for tr in batch])
    s2 = np.stack([tr.s2 for tr in batch])
    mask2 = np.stack([tr.mask2 for tr in batch])

    q2 = forward_batch(target, s2)
    q2 = np.where(mask2, q2, -np.inf)
    future = np.max(q2, axis=1)
    future[done] = 0.0
    y = r + gamma * future

    z1 = s @ net.w1.T + net.b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ net.w2.T + net.b2
    h2 = np.maximum(z2, 0.0)
    q = h2 @ net.w3.T + net.b3
    taken = q[np.arange(B), a]
    err = taken - y
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss={loss}")

    gq = np.zeros_like(q)
    gq[np.arange(B), a] = 2.0 * err / B
    gw3 = gq.T @ h2
    gb3 = gq.sum(axis=0)
    gh2 = gq @ net.w3
    gz2 = gh2 * (z2 > 0.0)
    gw2 = gz2.T @ h1
    gb2 = gz2.sum(axis=0)
    gh1 = gz2 @ net.w2
    gz1 = gh1 * (z1 > 0.0)
    gw1 = gz1.T @ s
    gb1 = gz1.sum(axis=0)

    net.w3 -= lr * gw3
    net.b3 -= lr * gb3
    net.w2 -= lr * gw2
    net.b2 -= lr * gb2
    net.w1 -= lr * gw1
    net.b1 -= lr * gb1
    return loss


@dataclass
class Hyperparams:
    gamma: float = 0.99
    lr: float = 5e-4
    hidden: int = 64
    buffer_capacity: int = 50_000
    batch_size: int = 64
    target_sync: int = 500          # steps between target refreshes
    eps_start: float = 1.0
    eps_end: float = 0.05
    anneal_fraction: float = 0.5    # of the estimated total steps
    train_every: int = 1
    warmup: int = 200               # transitions before updates begin
    anneal_steps: int | None = None  # overrides the estimate when set

    def fingerprint(self) -> str:
        import hashlib
        payload = json.dumps(
            {k: getattr(self, k) for k in sorted(self.__dataclass_fields__)},
            sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass
class EpisodeStats:
    episode: int
    steps: int
    total_reward: float
    mean_loss: float
    success_rate: float
    emissions: float
    epsilon: float


def train_agent(env_factory, episodes: int, hp: Hyperparams, seed: int = 0):
    """Offline training against environments produced per episode.

    ``env_factory(episode_index, rng)`` builds a fresh environment exposing
    reset() -> (obs, mask), step(a) -> (obs, reward, done, mask, info),
    n_actions, observation_dim, and steps_hint.  Returns the trained network
    plus one EpisodeStats per episode.
    """
    assert episodes >= 1
    rng = np.random.default_rng(seed)
    probe = env_factory(0, np.random.default_rng(seed))
    net = init_network(probe.observation_dim, probe.n_actions, hp.hidden,
                       seed=seed)
    target = net.copy()
    buffer = ReplayBuffer(hp.buffer_capacity)
    total_hint = hp.anneal_steps
    if total_hint is None:
        total_hint = max(1, int(episodes * probe.steps_hint))
    anneal_over = max(1, int(hp.anneal_fraction * total_hint))
    log = []
    step_count = 0
    for ep in range(episodes):
        env = env_factory(ep, np.random.default_rng(seed * 100003 + ep))
        obs, mask = env.reset()
        ep_reward = 0.0
        losses = []
        steps = 0
        info = {}
        while True:
            frac = min(1.0, step_count / anneal_over)
            eps = hp.eps_start + (hp.eps_end - hp.eps_start) * frac
            q = forward(net, obs)
            a = select_action(q, mask, eps, rng)
            obs2, reward, done, mask2, info = env.step(a)
            buffer.push(Transition(s=obs, a=a, r=reward, s2=obs2, done=done,
                                   mask2=mask2))
            ep_reward += reward
            step_count += 1
            steps += 1
            if len(buffer) >= max(hp.warmup, hp.batch_size) \
                    and step_count % hp.train_every == 0:
                batch = buffer.sample(hp.batch_size, rng)
                losses.append(train_step(net, target, batch, hp.gamma, hp.lr))
            if step_count % hp.target_sync == 0:
                target = net.copy()
            obs, mask = obs2, mask2
            if done:
                break
        ep_reward += info.get("tail_reward", 0.0)
        log.append(EpisodeStats(
            episode=ep, steps=steps, total_reward=ep_reward,
            mean_loss=float(np.mean(losses)) if losses else 0.0,
            success_rate=info.get("success_rate", 1.0),
            emissions=info.get("emissions", 0.0),
            epsilon=eps if steps else hp.eps_start))
    return net, log


def training_log_to_csv(log: list, path):
    import csv
    cols = ["episode", "steps", "total_reward", "mean_loss", "success_rate",
            "emissions", "epsilon"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in log:
            w.writerow([getattr(row, c) for c in cols])


# ---------------------------------------------------------------------------
# checkpoints: versioned JSON with row-major weight arrays


def save_checkpoint(net: QNetwork, path):
    doc = {"format_version": 1,
           "dims": [net.input_dim, net.w1.shape[0], net.w2.shape[0],
                    net.n_actions],
           "w1": net.w1.tolist(), "b1": net.b1.tolist(),
           "w2": net.w2.tolist(), "b2": net.b2.tolist(),
           "w3": net.w3.tolist(), "b3": net.b3.tolist()}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> QNetwork:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != 1:
        raise AgentError(f"unsupported checkpoint version in {path}")
    return QNetwork(w1=np.array(doc["w1"]), b1=np.array(doc["b1"]),
                    w2=np.array(doc["w2"]), b2=np.array(doc["b2"]),
                    w3=np.array(doc["w3"]), b3=np.array(doc["b3"]))
