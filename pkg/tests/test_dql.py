import math

import numpy as np
import pytest

from leosim.dql import (
    AdamState,
    AgentConfig,
    NoFeasibleActionError,
    QAgent,
    QNetwork,
    ReplayBuffer,
    Transition,
    encode_state,
    epsilon_at,
    forward,
    reward,
    select_action,
    sync_target,
    td_loss_and_grads,
    td_targets,
    td_update,
)


def tiny_net(rng, d=4, hidden=(3, 2), n_actions=6):
    net = QNetwork.init(d, hidden, n_actions, rng)
    # random biases keep preactivations off the ReLU kink, where finite
    # differences and the analytic subgradient legitimately disagree
    for b in net.biases:
        b += rng.normal(scale=0.1, size=b.shape)
    return net


def random_batch(rng, net, size=5, n_actions=6):
    d = net.weights[0].shape[0]
    batch = []
    for _ in range(size):
        feas = rng.random(n_actions) < 0.7
        if not feas.any():
            feas[int(rng.integers(n_actions))] = True
        batch.append(Transition(
            state=rng.normal(size=d),
            action=int(rng.integers(n_actions)),
            reward=float(rng.normal()),
            next_state=rng.normal(size=d),
            terminal=bool(rng.random() < 0.3),
            feasible_next=feas,
        ))
    return batch


def finite_difference_grads(net, target, batch, discount, h=1e-6):
    """Oracle: central differences of the TD loss w.r.t. every parameter."""
    grads_w, grads_b = [], []
    for arrs, grads in ((net.weights, grads_w), (net.biases, grads_b)):
        for p in arrs:
            g = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                lp, _, _ = td_loss_and_grads(net, target, batch, discount)
                p[idx] = orig - h
                lm, _, _ = td_loss_and_grads(net, target, batch, discount)
                p[idx] = orig
                g[idx] = (lp - lm) / (2 * h)
                it.iternext()
            grads.append(g)
    return grads_w, grads_b


class TestEncodeState:
    def test_origin_destination(self):
        ports = [(True, 0.0, 0.0)] * 6
        s = encode_state(ports, 0.0, 0.0)
        assert s.shape == (22,)
        assert np.allclose(s[0:6], 0.0)        # queue ratios
        assert np.allclose(s[6:12], 1.0)       # flags
        assert np.allclose(s[12:18], 0.0)      # delays
        assert np.allclose(s[18:22], [0, 1, 0, 1])

    def test_isolated(self):
        ports = [(False, 0.5, 0.2)] * 6
        s = encode_state(ports, 10.0, 20.0)
        assert np.allclose(s[6:12], 0.0)
        assert np.allclose(s[0:6], 0.0)
        assert np.allclose(s[12:18], 1.0)      # inactive delay pegged at max

    def test_queue_ratio_slot(self):
        ports = [(True, 0.0, 0.0)] * 6
        ports[2] = (True, 140 / 200, 0.0)      # port E is index 2
        s = encode_state(ports, 0.0, 0.0)
        assert s[2] == pytest.approx(0.7)

    def test_onehot_mode(self):
        onehot = np.zeros(5)
        onehot[3] = 1.0
        s = encode_state([(True, 0.0, 0.0)] * 6, 0.0, 0.0, dest_onehot=onehot)
        assert s.shape == (23,)
        assert s[18 + 3] == 1.0

    def test_entries_finite_and_ranged(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ports = [(bool(rng.integers(2)), float(rng.uniform(-1, 3)),
                      float(rng.uniform(-1, 3))) for _ in range(6)]
            s = encode_state(ports, float(rng.uniform(-90, 90)), float(rng.uniform(-180, 180)))
            assert np.isfinite(s).all()
            assert (s[0:18] >= 0).all() and (s[0:18] <= 1).all()


class TestForward:
    def test_zero_network(self):
        net = QNetwork([np.zeros((4, 3)), np.zeros((3, 2)), np.zeros((2, 6))],
                       [np.zeros(3), np.zeros(2), np.zeros(6)])
        assert np.allclose(forward(net, np.ones(4)), 0.0)

    def test_hand_computed_toy(self):
        # x=[1,-2]; z1=[1.5,-3] -> relu [1.5,0]; z2=[1.5,1.5] -> relu same;
        # out = [1.5+0.1, 1.5+0.2] = [1.6, 1.7]  (hand-evaluated)
        net = QNetwork(
            [np.array([[1.0, 0.0], [0.0, 1.0]]),
             np.array([[1.0, 1.0], [0.0, 1.0]]),
             np.array([[1.0, 0.0], [0.0, 1.0]])],
            [np.array([0.5, -1.0]), np.zeros(2), np.array([0.1, 0.2])],
        )
        out = forward(net, np.array([1.0, -2.0]))
        assert np.allclose(out, [1.6, 1.7])

    def test_pure_function(self):
        rng = np.random.default_rng(1)
        net = tiny_net(rng)
        x = rng.normal(size=4)
        assert np.array_equal(forward(net, x), forward(net, x))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        net = tiny_net(rng)
        xs = rng.normal(size=(7, 4))
        batch_out = forward(net, xs)
        for i in range(7):
            assert np.allclose(batch_out[i], forward(net, xs[i]))

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(3)
        net = tiny_net(rng)
        with pytest.raises(ValueError):
            forward(net, np.ones(5))


class TestSelectAction:
    def test_greedy_argmax(self):
        net = QNetwork([np.zeros((2, 6))], [np.array([5.0, 1, 1, 1, 1, 1])])
        a = select_action(net, np.zeros(2), 0.0, np.ones(6, bool), np.random.default_rng(0))
        assert a == 0

    def test_masked_argmax(self):
        net = QNetwork([np.zeros((2, 6))], [np.array([5.0, 1, 1, 1, 1, 1])])
        mask = np.ones(6, bool)
        mask[0] = False
        a = select_action(net, np.zeros(2), 0.0, mask, np.random.default_rng(0))
        assert a == 1

    def test_exploration_uniform(self):
        net = QNetwork([np.zeros((2, 6))], [np.zeros(6)])
        mask = np.array([True, False, True, False, True, False])
        rng = np.random.default_rng(42)
        counts = np.zeros(6)
        n = 10_000
        for _ in range(n):
            counts[select_action(net, np.zeros(2), 1.0, mask, rng)] += 1
        assert counts[~mask].sum() == 0
        p = 1 / 3
        sigma = math.sqrt(n * p * (1 - p))
        for i in (0, 2, 4):
            assert abs(counts[i] - n * p) < 3 * sigma

    def test_never_masked(self):
        # quantified over 1e5 random (Q, mask) pairs
        rng = np.random.default_rng(7)
        net = tiny_net(rng, d=3)
        states = rng.normal(size=(100_000, 3))
        masks = rng.random((100_000, 6)) < 0.5
        masks[~masks.any(axis=1), 0] = True
        epsilons = rng.random(100_000)
        for s, mask, eps in zip(states, masks, epsilons):
            assert mask[select_action(net, s, float(eps), mask, rng)]

    def test_all_masked_raises(self):
        rng = np.random.default_rng(8)
        net = tiny_net(rng, d=3)
        with pytest.raises(NoFeasibleActionError):
            select_action(net, np.zeros(3), 0.5, np.zeros(6, bool), rng)


class TestReward:
    CFG = AgentConfig()

    def test_delivery_bonus_only(self):
        assert reward(0, 0, True, self.CFG) == 10.0

    def test_zero(self):
        assert reward(0, 0, False, self.CFG) == 0.0

    def test_default_weights_example(self):
        # -0.01*50 - 0.1*6 + 10 = 8.9
        assert reward(50, 6, True, self.CFG) == pytest.approx(8.9)

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError):
            reward(-1, 0, False, self.CFG)


class TestTdUpdate:
    def test_zero_net_terminal_batch_noop(self):
        rng = np.random.default_rng(0)
        cfg = AgentConfig(hidden_sizes=(3, 2))
        net = QNetwork([np.zeros((4, 3)), np.zeros((3, 2)), np.zeros((2, 6))],
                       [np.zeros(3), np.zeros(2), np.zeros(6)])
        target = net.copy()
        adam = AdamState(net)
        batch = [Transition(rng.normal(size=4), 2, 0.0, np.zeros(4), True,
                            np.ones(6, bool)) for _ in range(4)]
        loss = td_update(net, target, batch, cfg, adam)
        assert loss == 0.0
        for w in net.weights:
            assert np.allclose(w, 0.0)

    def test_gradients_match_finite_differences(self):
        # 20 random tiny networks, relative error < 1e-4 in double precision
        rng = np.random.default_rng(42)
        for trial in range(20):
            net = tiny_net(rng)
            target = tiny_net(rng)
            batch = random_batch(rng, net, size=4)
            _, gw, gb = td_loss_and_grads(net, target, batch, 0.99)
            fw, fb = finite_difference_grads(net, target, batch, 0.99)
            for analytic, fd in zip(gw + gb, fw + fb):
                denom = max(np.linalg.norm(analytic), np.linalg.norm(fd), 1e-12)
                rel = np.linalg.norm(analytic - fd) / denom
                assert rel < 1e-4, f"trial {trial}: rel err {rel}"

    def test_convergence_on_fixed_transition(self):
        # realizable quadratic: repeated updates drive Q(s,a) -> y
        rng = np.random.default_rng(5)
        cfg = AgentConfig(hidden_sizes=(8,), learning_rate=1e-2)
        net = QNetwork.init(4, (8,), 6, rng)
        target = net.copy()
        adam = AdamState(net)
        batch = [Transition(rng.normal(size=4), 1, 1.0, np.zeros(4), True, np.ones(6, bool))]
        losses = [td_update(net, target, batch, cfg, adam) for _ in range(600)]
        checkpoints = losses[::100]
        for earlier, later in zip(checkpoints, checkpoints[1:]):
            assert later <= earlier + 1e-9
        assert losses[-1] < 1e-6
        q = forward(net, batch[0].state)
        assert q[1] == pytest.approx(1.0, abs=1e-3)

    def test_terminal_targets_ignore_next_state(self):
        rng = np.random.default_rng(6)
        net = tiny_net(rng)
        t = Transition(rng.normal(size=4), 0, 2.5, rng.normal(size=4) * 100,
                       True, np.ones(6, bool))
        y = td_targets(net, [t], 0.99)
        assert y[0] == pytest.approx(2.5)

    def test_infeasible_next_state_contributes_zero(self):
        rng = np.random.default_rng(7)
        net = tiny_net(rng)
        t = Transition(rng.normal(size=4), 0, 2.5, rng.normal(size=4),
                       False, np.zeros(6, bool))
        y = td_targets(net, [t], 0.99)
        assert y[0] == pytest.approx(2.5)

    def test_empty_batch_rejected(self):
        rng = np.random.default_rng(8)
        net = tiny_net(rng)
        with pytest.raises(ValueError):
            td_loss_and_grads(net, net.copy(), [], 0.99)

    def test_parameters_stay_finite(self):
        # 1e4 updates on random data at the default learning rate
        rng = np.random.default_rng(9)
        cfg = AgentConfig(hidden_sizes=(16, 8))
        net = QNetwork.init(8, (16, 8), 6, rng)
        target = net.copy()
        adam = AdamState(net)
        for i in range(10_000):
            batch = random_batch(rng, net, size=8)
            td_update(net, target, batch, cfg, adam)
            if i % 1000 == 0:
                sync_target(net, target)
                assert net.all_finite()
        assert net.all_finite()


class TestSyncTarget:
    def test_copy_semantics(self):
        rng = np.random.default_rng(10)
        net = tiny_net(rng)
        target = tiny_net(rng)
        x = rng.normal(size=4)
        assert not np.allclose(forward(net, x), forward(target, x))
        sync_target(net, target)
        assert np.allclose(forward(net, x), forward(target, x))
        # copy, not aliasing
        net.weights[0][0, 0] += 1.0
        assert not np.allclose(net.weights[0], target.weights[0])


class TestReplayBuffer:
    def _t(self, i):
        return Transition(np.array([float(i)]), 0, 0.0, np.array([0.0]), False,
                          np.ones(6, bool))

    def test_capacity_and_eviction(self):
        buf = ReplayBuffer(10)
        items = [self._t(i) for i in range(13)]
        for t in items:
            buf.push(t)
        assert len(buf) == 10
        for old in items[:3]:
            assert old not in buf
        for new in items[3:]:
            assert new in buf

    def test_sample_respects_size(self):
        buf = ReplayBuffer(100)
        for i in range(5):
            buf.push(self._t(i))
        rng = np.random.default_rng(0)
        batch = buf.sample(64, rng)
        assert len(batch) == 5
        buf2 = ReplayBuffer(100)
        with pytest.raises(ValueError):
            buf2.sample(1, rng)


class TestEpsilonSchedule:
    def test_three_points(self):
        cfg = AgentConfig()
        assert epsilon_at(0, cfg) == 1.0
        assert epsilon_at(200_000, cfg) == pytest.approx(0.05)
        assert epsilon_at(100_000, cfg) == pytest.approx(0.525)
        assert epsilon_at(400_000, cfg) == pytest.approx(0.05)


class TestAgentAndCheckpoint:
    def test_state_dim(self):
        agent = QAgent(AgentConfig(hidden_sizes=(8, 4)), seed=1)
        assert agent.state_dim == 22
        assert agent.net.sizes == [22, 8, 4, 6]

    def test_checkpoint_round_trip(self, tmp_path):
        agent = QAgent(AgentConfig(hidden_sizes=(8, 4)), seed=3)
        rng = np.random.default_rng(0)
        for _ in range(20):
            agent.observe(Transition(rng.normal(size=22), 1, 0.5,
                                     rng.normal(size=22), False, np.ones(6, bool)))
        path = tmp_path / "agent.bin"
        agent.save(path)
        loaded = QAgent.load(path)
        x = rng.normal(size=22)
        assert np.array_equal(forward(loaded.net, x), forward(agent.net, x))
        assert np.array_equal(forward(loaded.target, x), forward(loaded.net, x))
        assert loaded.steps == agent.steps
        assert loaded.updates == agent.updates

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        def make(path):
            agent = QAgent(AgentConfig(hidden_sizes=(8, 4)), seed=3)
            rng = np.random.default_rng(1)
            for _ in range(10):
                agent.observe(Transition(rng.normal(size=22), 0, 1.0,
                                         rng.normal(size=22), True, np.ones(6, bool)))
            agent.save(path)

        make(tmp_path / "a.bin")
        make(tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            QAgent.load(p)

    def test_target_sync_counter(self):
        cfg = AgentConfig(hidden_sizes=(4,), target_sync_steps=5, batch_size=2)
        agent = QAgent(cfg, seed=4)
        rng = np.random.default_rng(2)
        x = rng.normal(size=22)
        before = forward(agent.target, x).copy()
        for i in range(4):
            agent.observe(Transition(rng.normal(size=22), 0, 1.0,
                                     rng.normal(size=22), True, np.ones(6, bool)))
        assert np.array_equal(forward(agent.target, x), before)  # not yet
        agent.observe(Transition(rng.normal(size=22), 0, 1.0,
                                 rng.normal(size=22), True, np.ones(6, bool)))
        assert np.array_equal(forward(agent.target, x), forward(agent.net, x))
