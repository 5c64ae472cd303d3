import numpy as np
import pytest

from tsco import agent as ag
from tsco import cpn
from tsco.agent import (CarbonQueue, GridSignals, Hyperparams, QNetwork,
                        ReplayBuffer, RewardWeights, Transition,
                        compute_reward, encode_state, forward, forward_batch,
                        init_network, select_action, train_agent, train_step,
                        update_carbon_queue)


def make_state(n_nodes=2):
    nodes = [cpn.CpnNode(id=i, bus=i + 1, compute_flops=1e10, slots=4,
                         idle_mw=0.05, peak_mw=0.15) for i in range(n_nodes)]
    return cpn.CpnState(nodes)


def signals_for(state, lmp=0.0, mci=0.0, res=0.0, soc=0.0):
    ids = list(state.nodes)
    return GridSignals(lmp={i: lmp for i in ids}, mci={i: mci for i in ids},
                       res_fraction={i: res for i in ids}, bess_soc=soc)


# ---------------------------------------------------------------------------
# encoding


def test_encode_empty_system_midnight():
    st = make_state()
    vec = encode_state(st, signals_for(st), CarbonQueue(), 0.0)
    assert vec.shape == (ag.state_dim(2),)
    # everything zero except the empty-queue flag, free-slot fractions, and
    # the cosine of the time encoding
    assert vec[3] == 1.0
    assert vec[-1] == pytest.approx(1.0)
    assert vec[-2] == pytest.approx(0.0)
    nonzero = set(np.nonzero(vec)[0])
    free_idx = {4 + 3 * k + 1 for k in range(2)}
    assert nonzero == {3, len(vec) - 1} | free_idx


def test_encode_utilization_feature():
    st = make_state()
    st.add_job(cpn.Job(id=0, arrival=0, deadline=5,
                       tasks=[cpn.SubTask(0, 1e12, 4)], edges=[]))
    ready = st.ready_tasks()
    st.apply_assignment(0, ready[0][1], 1)
    vec = encode_state(st, signals_for(st), CarbonQueue(), 0.25)
    assert vec[4 + 3] == 1.0       # node 1 utilization
    assert vec[4 + 3 + 1] == 0.0   # node 1 free fraction


def test_encode_lmp_normalization_and_missing_signal():
    st = make_state()
    sig = signals_for(st, lmp=ag.LMP_NORM)
    vec = encode_state(st, sig, CarbonQueue(), 0.0)
    lmp_block = 4 + 6
    assert vec[lmp_block] == 1.0
    del sig.lmp[0]
    with pytest.raises(ag.MissingSignal):
        encode_state(st, sig, CarbonQueue(), 0.0)


# ---------------------------------------------------------------------------
# carbon queue


def test_queue_examples():
    q = CarbonQueue(level=0.0, budget_rate=3.0)
    assert update_carbon_queue(q, 2.0).level == 0.0
    q = CarbonQueue(level=5.0, budget_rate=3.0)
    assert update_carbon_queue(q, 4.0).level == 6.0
    q = CarbonQueue(level=7.0, budget_rate=3.0)
    assert update_carbon_queue(q, 3.0).level == 7.0


def test_queue_nonnegative_random_sequences():
    rng = np.random.default_rng(1)
    q = CarbonQueue(level=0.0, budget_rate=0.5)
    for _ in range(10_000):
        q = update_carbon_queue(q, float(rng.exponential(0.5)))
        assert q.level >= 0.0


# ---------------------------------------------------------------------------
# reward


def test_reward_zero_when_nothing_happens():
    r = compute_reward(0, 0, 0.0, 0.0, CarbonQueue(), RewardWeights())
    assert r.total == 0.0


def test_reward_single_completion():
    w = RewardWeights(revenue=1.0, cost=0.0, carbon=0.0, deadline=0.0,
                      lyapunov=0.0, revenue_per_job=10.0)
    r = compute_reward(1, 0, 0.0, 0.0, CarbonQueue(), w)
    assert r.total == 10.0


def test_reward_spec_arithmetic():
    # energy 0.1 MWh at LMP 50, MCI 0.8, queue 5, weights (0, 1, 1, 0, 1)
    w = RewardWeights(revenue=0.0, cost=1.0, carbon=1.0, deadline=0.0,
                      lyapunov=1.0)
    q = CarbonQueue(level=5.0, budget_rate=1.0)
    r = compute_reward(0, 0, energy_cost=0.1 * 50.0, carbon=0.1 * 0.8,
                       queue=q, w=w)
    assert r.total == pytest.approx(-5.48)
    assert (r.revenue - r.energy_cost - r.carbon - r.deadline_penalty
            - r.lyapunov) == pytest.approx(r.total)


# ---------------------------------------------------------------------------
# network


def test_forward_zero_net():
    net = init_network(4, 3, hidden=5, seed=0)
    for p in net.parameters():
        p[:] = 0.0
    assert np.all(forward(net, np.ones(4)) == 0.0)


def test_forward_hand_computed():
    net = QNetwork(w1=np.array([[1.0, 0.0], [0.0, 1.0]]), b1=np.zeros(2),
                   w2=np.eye(2), b2=np.zeros(2),
                   w3=np.array([[1.0, 2.0], [3.0, -1.0]]), b3=np.array([0.5, 0.0]))
    q = forward(net, np.array([1.0, 2.0]))
    assert q[0] == pytest.approx(1.0 + 4.0 + 0.5)
    assert q[1] == pytest.approx(3.0 - 2.0)


def test_forward_against_independent_reimplementation():
    rng = np.random.default_rng(5)
    net = init_network(6, 4, hidden=8, seed=7)
    s = rng.normal(size=6)
    # plain-loop re-implementation of the same arithmetic
    h1 = [max(sum(net.w1[i, j] * s[j] for j in range(6)) + net.b1[i], 0.0)
          for i in range(8)]
    h2 = [max(sum(net.w2[i, j] * h1[j] for j in range(8)) + net.b2[i], 0.0)
          for i in range(8)]
    q = [sum(net.w3[i, j] * h2[j] for j in range(8)) + net.b3[i]
         for i in range(4)]
    assert np.allclose(forward(net, s), q, atol=1e-12)
    assert np.allclose(forward_batch(net, s[None, :])[0], q, atol=1e-12)


# ---------------------------------------------------------------------------
# action selection


def test_greedy_picks_argmax():
    rng = np.random.default_rng(0)
    a = select_action(np.array([1.0, 5.0, 3.0]), np.array([True] * 3), 0.0, rng)
    assert a == 1


def test_greedy_respects_mask():
    rng = np.random.default_rng(0)
    a = select_action(np.array([1.0, 5.0, 3.0]),
                      np.array([True, False, True]), 0.0, rng)
    assert a == 2


def test_masked_never_selected_any_epsilon():
    mask = np.array([False, True, False, True])
    for eps in (0.0, 0.3, 1.0):
        rng = np.random.default_rng(42)
        for _ in range(500):
            a = select_action(np.arange(4.0), mask, eps, rng)
            assert mask[a]


def test_epsilon_one_reproducible():
    q = np.zeros(4)
    mask = np.ones(4, dtype=bool)
    picks1 = [select_action(q, mask, 1.0, np.random.default_rng(9))
              for _ in range(1)]
    picks2 = [select_action(q, mask, 1.0, np.random.default_rng(9))
              for _ in range(1)]
    assert picks1 == picks2


def test_scale_invariance_of_greedy():
    rng = np.random.default_rng(3)
    q = rng.normal(size=5)
    mask = np.array([True, False, True, True, True])
    base = select_action(q, mask, 0.0, rng)
    for scale in (0.1, 2.0, 100.0):
        assert select_action(scale * q, mask, 0.0, rng) == base


# ---------------------------------------------------------------------------
# training step


def toy_batch(rng, net, n=6):
    batch = []
    for _ in range(n):
        s = rng.normal(size=net.input_dim)
        s2 = rng.normal(size=net.input_dim)
        mask2 = rng.random(net.n_actions) > 0.3
        mask2[0] = True
        batch.append(Transition(s=s, a=int(rng.integers(net.n_actions)),
                                r=float(rng.normal()), s2=s2,
                                done=bool(rng.random() < 0.3), mask2=mask2))
    return batch


def td_loss(net, target, batch, gamma):
    s = np.stack([tr.s for tr in batch])
    a = np.array([tr.a for tr in batch])
    r = np.array([tr.r for tr in batch])
    done = np.array([tr.done for tr in batch])
    q2 = forward_batch(target, np.stack([tr.s2 for tr in batch]))
    q2 = np.where(np.stack([tr.mask2 for tr in batch]), q2, -np.inf)
    future = np.max(q2, axis=1)
    future[done] = 0.0
    y = r + gamma * future
    q = forward_batch(net, s)
    taken = q[np.arange(len(batch)), a]
    return float(np.mean((taken - y) ** 2))


def test_gamma_zero_single_transition():
    net = init_network(4, 3, hidden=5, seed=1)
    target = net.copy()
    tr = Transition(s=np.ones(4), a=2, r=1.5, s2=np.zeros(4), done=False,
                    mask2=np.ones(3, dtype=bool))
    q_before = forward(net, tr.s)[2]
    loss = train_step(net, target, [tr], gamma=0.0, lr=1e-3)
    assert loss == pytest.approx((q_before - 1.5) ** 2)


def test_done_kills_future_term():
    net = init_network(4, 3, hidden=5, seed=2)
    target = net.copy()
    tr = Transition(s=np.ones(4), a=0, r=2.0, s2=100.0 * np.ones(4),
                    done=True, mask2=np.ones(3, dtype=bool))
    q_before = forward(net, tr.s)[0]
    loss = train_step(net, target, [tr], gamma=0.99, lr=1e-3)
    assert loss == pytest.approx((q_before - 2.0) ** 2)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    net = init_network(4, 3, hidden=5, seed=3)
    target = init_network(4, 3, hidden=5, seed=4)
    batch = toy_batch(rng, net)
    gamma = 0.9
    # recover the analytic gradient from one unit-rate update
    before = [p.copy() for p in net.parameters()]
    work = net.copy()
    train_step(work, target, batch, gamma, lr=1.0)
    grads = [b - a for b, a in zip(before, work.parameters())]
    h = 1e-5
    for p_idx, param in enumerate(net.parameters()):
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            plus = net.copy()
            plus.parameters()[p_idx][ix] += h
            minus = net.copy()
            minus.parameters()[p_idx][ix] -= h
            fd = (td_loss(plus, target, batch, gamma)
                  - td_loss(minus, target, batch, gamma)) / (2 * h)
            an = grads[p_idx][ix]
            denom = max(abs(fd), abs(an), 1e-8)
            assert abs(fd - an) / denom <= 1e-4, (p_idx, ix, fd, an)


def test_non_finite_loss_raises():
    net = init_network(4, 3, hidden=5, seed=1)
    target = net.copy()
    tr = Transition(s=np.full(4, 1e200), a=0, r=0.0, s2=np.zeros(4),
                    done=True, mask2=np.ones(3, dtype=bool))
    with np.errstate(over="ignore"), pytest.raises(ag.NonFiniteLoss):
        train_step(net, target, [tr], gamma=0.9, lr=1e-3)


# ---------------------------------------------------------------------------
# training loop on a toy environment


class ToyEnv:
    """Two-step episodic bandit: action 1 pays off, others do not."""

    observation_dim = 3
    n_actions = 3
    steps_hint = 2

    def __init__(self, episode, rng):
        self.rng = rng
        self.t = 0

    def reset(self):
        self.t = 0
        return np.array([1.0, 0.0, 0.0]), np.ones(3, dtype=bool)

    def step(self, a):
        reward = 1.0 if a == 1 else -0.2
        self.t += 1
        done = self.t >= 2
        obs = np.array([0.0, 1.0, float(self.t)])
        return obs, reward, done, np.ones(3, dtype=bool), \
            {"success_rate": 1.0, "emissions": 0.0}


def test_train_agent_single_episode_log():
    hp = Hyperparams(warmup=1, batch_size=2, eps_start=1.0, eps_end=1.0)
    net, log = train_agent(ToyEnv, episodes=1, hp=hp, seed=5)
    assert len(log) == 1
    assert log[0].steps == 2


def test_train_agent_deterministic():
    hp = Hyperparams(warmup=4, batch_size=4)
    _, log1 = train_agent(ToyEnv, episodes=6, hp=hp, seed=9)
    _, log2 = train_agent(ToyEnv, episodes=6, hp=hp, seed=9)
    assert [(s.total_reward, s.mean_loss) for s in log1] == \
        [(s.total_reward, s.mean_loss) for s in log2]


def test_train_agent_learns_toy_bandit():
    hp = Hyperparams(warmup=8, batch_size=8, lr=5e-3, target_sync=50,
                     anneal_steps=120)
    net, log = train_agent(ToyEnv, episodes=120, hp=hp, seed=2)
    first = np.mean([s.total_reward for s in log[:20]])
    last = np.mean([s.total_reward for s in log[-20:]])
    assert last > first
    q = forward(net, np.array([1.0, 0.0, 0.0]))
    assert int(np.argmax(q)) == 1


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tmp_path):
    net = init_network(6, 4, hidden=8, seed=3)
    path = tmp_path / "net.json"
    ag.save_checkpoint(net, path)
    back = ag.load_checkpoint(path)
    s = np.linspace(-1, 1, 6)
    assert np.array_equal(forward(net, s), forward(back, s))


def test_replay_ring_buffer():
    buf = ReplayBuffer(capacity=3)
    for k in range(5):
        buf.push(Transition(s=np.array([k]), a=0, r=0.0, s2=np.array([k]),
                            done=False, mask2=np.array([True])))
    assert len(buf) == 3
    values = sorted(tr.s[0] for tr in buf.data)
    assert values == [2, 3, 4]
