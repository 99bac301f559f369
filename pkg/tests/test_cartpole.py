import math

import numpy as np
import pytest

from scratchnet.cartpole import (CartPoleState, MaskedSquaredLoss, QNetConfig,
                                 Transition, _euler_step, build_qnet,
                                 env_reset, env_step, epsilon_greedy,
                                 evaluate_greedy, is_terminal, q_target,
                                 q_train_step, run_training)
from scratchnet.errors import ConfigError, StateError
from scratchnet.layers import Linear
from scratchnet.network import SequentialModel
from scratchnet.optim import OptimHyper, make_optimizer
from scratchnet.tensor import SeededRng


def oracle_step(state, force):
    """Independent scalar reimplementation of the dynamics (test authority)."""
    x, x_dot, theta, theta_dot = state
    g, mc, mp, half_l, tau = 9.8, 1.0, 0.1, 0.5, 0.02
    sin_t, cos_t = math.sin(theta), math.cos(theta)
    temp = (force + mp * half_l * theta_dot ** 2 * sin_t) / (mc + mp)
    theta_acc = (g * sin_t - cos_t * temp) / (
        half_l * (4.0 / 3.0 - mp * cos_t ** 2 / (mc + mp)))
    x_acc = temp - mp * half_l * theta_acc * cos_t / (mc + mp)
    return (x + tau * x_dot, x_dot + tau * x_acc,
            theta + tau * theta_dot, theta_dot + tau * theta_acc)


class TestDynamics:
    def test_unforced_zero_state_is_equilibrium(self):
        zero = CartPoleState(0.0, 0.0, 0.0, 0.0)
        after = _euler_step(zero, 0.0)
        assert after == zero

    def test_force_moves_cart_from_equilibrium(self):
        zero = CartPoleState(0.0, 0.0, 0.0, 0.0)
        pushed, _, _ = env_step(zero, 1)
        # oracle sign: positive force gives positive x acceleration
        want = oracle_step((0, 0, 0, 0), +10.0)
        assert pushed.x_dot > 0.0
        assert pushed.x_dot == pytest.approx(want[1], abs=1e-15)

    def test_ten_step_trajectory_matches_oracle(self):
        rng = SeededRng(3)
        state = env_reset(rng)
        oracle = (state.x, state.x_dot, state.theta, state.theta_dot)
        for step in range(10):
            act = step % 2
            state, _, terminal = env_step(state, act)
            oracle = oracle_step(oracle, 10.0 if act == 1 else -10.0)
            assert state.x == pytest.approx(oracle[0], abs=1e-12)
            assert state.x_dot == pytest.approx(oracle[1], abs=1e-12)
            assert state.theta == pytest.approx(oracle[2], abs=1e-12)
            assert state.theta_dot == pytest.approx(oracle[3], abs=1e-12)
            if terminal:
                break

    def test_pole_falls_without_force(self):
        state = CartPoleState(0.0, 0.0, 0.02, 0.0)
        thetas = [state.theta]
        for _ in range(25):
            state = _euler_step(state, 0.0)
            thetas.append(state.theta)
        assert all(b >= a for a, b in zip(thetas, thetas[1:]))

    def test_reset_bounds(self):
        rng = SeededRng(4)
        for _ in range(50):
            s = env_reset(rng)
            for v in (s.x, s.x_dot, s.theta, s.theta_dot):
                assert -0.05 <= v <= 0.05

    def test_reward_zero_at_termination(self):
        state = CartPoleState(2.39, 5.0, 0.0, 0.0)
        new, reward, terminal = env_step(state, 1)
        assert terminal and reward == 0.0 and abs(new.x) > 2.4

    def test_step_on_terminal_state_rejected(self):
        with pytest.raises(StateError):
            env_step(CartPoleState(3.0, 0.0, 0.0, 0.0), 0)

    def test_termination_bounds(self):
        assert is_terminal(CartPoleState(2.41, 0, 0, 0))
        assert is_terminal(CartPoleState(0, 0, 0.21, 0))
        assert not is_terminal(CartPoleState(2.39, 0, 0.20, 0))

    def test_fixed_seed_trajectories_identical(self):
        def roll(seed):
            rng = SeededRng(seed)
            state = env_reset(rng)
            out = []
            for _ in range(40):
                act = int(rng.integers(1, 2)[0])
                state, _, term = env_step(state, act)
                out.append((state.x, state.theta))
                if term:
                    break
            return out

        assert roll(9) == roll(9)


class TestQTarget:
    def test_arithmetic(self):
        tr = Transition(None, 0, 1.0, None, False)
        assert q_target(tr, np.array([2.0, 1.5]), 0.9) == pytest.approx(2.8)

    def test_terminal_drops_bootstrap(self):
        tr = Transition(None, 0, 0.0, None, True)
        assert q_target(tr, np.array([100.0, 100.0]), 0.9) == 0.0

    def test_gamma_zero_is_reward(self):
        tr = Transition(None, 1, 1.0, None, False)
        assert q_target(tr, np.array([123.0, -4.0]), 0.0) == 1.0


class TestEpsilonGreedy:
    def test_zero_epsilon_argmax(self):
        rng = SeededRng(5)
        assert epsilon_greedy(np.array([0.1, 0.9]), 0.0, rng) == 1

    def test_tie_goes_to_lowest_index(self):
        rng = SeededRng(6)
        assert epsilon_greedy(np.array([0.5, 0.5]), 0.0, rng) == 0

    def test_epsilon_one_uniform_within_3_sigma(self):
        rng = SeededRng(7)
        n = 10000
        ones = sum(epsilon_greedy(np.array([5.0, 0.0]), 1.0, rng) for _ in range(n))
        sigma = math.sqrt(n * 0.25)
        assert abs(ones - n / 2) < 3 * sigma

    def test_epsilon_validation(self):
        with pytest.raises(ConfigError):
            epsilon_greedy(np.array([0.0, 1.0]), 1.5, SeededRng(0))


class TestQTrainStep:
    def make_transitions(self, n, seed):
        rng = SeededRng(seed)
        out = []
        for _ in range(n):
            s = env_reset(rng)
            act = int(rng.integers(1, 2)[0])
            s2, r, term = env_step(s, act)
            out.append(Transition(s, act, r, s2, term))
        return out

    def test_zero_residual_zero_gradient(self):
        # gamma=0 and rewards equal to current predictions: loss exactly 0
        model = build_qnet(8, seed=1)
        opt = make_optimizer("sgd", model.named_parameters(), OptimHyper(lr=0.1))
        trs = self.make_transitions(4, seed=2)
        preds = model.forward(np.array([[t.state_old.x, t.state_old.x_dot,
                                         t.state_old.theta, t.state_old.theta_dot]
                                        for t in trs]).T)
        rigged = [Transition(t.state_old, t.act, float(preds[t.act, j]),
                             t.state_new, True) for j, t in enumerate(trs)]
        before = model.state_dict()
        value = q_train_step(model, rigged, 0.0, opt)
        assert value == 0.0
        after = model.state_dict()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_scalar_chain_rule(self):
        # single transition, linear net: dW row of taken action must be
        # 2 * (pred - target) * state, the non-taken row exactly zero
        lin = Linear(4, 2, dtype=np.float64)
        lin.init_params(SeededRng(3), std=0.5)
        model = SequentialModel([lin], dtype=np.float64)
        opt = make_optimizer("sgd", model.named_parameters(),
                             OptimHyper(lr=1e-9))
        tr = self.make_transitions(1, seed=4)[0]
        state_col = tr.state_old.as_column()
        pred = model.forward(state_col)
        target = q_target(tr, model.forward(tr.state_new.as_column())[:, 0], 0.9)
        q_train_step(model, [tr], 0.9, opt)
        residual = float(pred[tr.act, 0]) - target
        want = 2.0 * residual * state_col[:, 0]
        assert np.allclose(lin.dW[tr.act], want, atol=1e-10)
        assert not lin.dW[1 - tr.act].any()

    def test_non_taken_action_gradient_exactly_zero(self):
        loss = MaskedSquaredLoss()
        pred = SeededRng(8).normal((2, 6))
        actions = np.array([0, 1, 1, 0, 1, 0])
        targets = SeededRng(9).normal((6,))
        loss.forward(pred, (actions, targets))
        grad = loss.backward()
        lanes = np.arange(6)
        assert not grad[1 - actions, lanes].any()
        assert grad[actions, lanes].all()

    def test_masked_loss_matches_finite_differences(self):
        rng = SeededRng(10)
        pred = rng.normal((2, 5))
        actions = rng.integers(5, 2)
        targets = rng.normal((5,))
        loss = MaskedSquaredLoss()

        def value():
            return loss.forward(pred, (actions, targets))

        value()
        grad = loss.backward()
        h = 1e-6
        num = np.zeros_like(pred)
        for i in range(pred.size):
            old = pred.flat[i]
            pred.flat[i] = old + h
            vp = value()
            pred.flat[i] = old - h
            vm = value()
            pred.flat[i] = old
            num.flat[i] = (vp - vm) / (2 * h)
        assert np.abs(grad - num).max() < 1e-5


class TestRunTraining:
    def test_zero_episodes_empty_log(self):
        result = run_training(QNetConfig(max_episodes=0), seed=1)
        assert result.episodes == []
        assert result.solved_at is None

    def test_deterministic_episode_log(self):
        cfg = QNetConfig(max_episodes=8)
        a = run_training(cfg, seed=5)
        b = run_training(cfg, seed=5)
        assert [(r.steps, r.total_reward, r.mean_loss) for r in a.episodes] == \
               [(r.steps, r.total_reward, r.mean_loss) for r in b.episodes]

    def test_gamma_zero_q_values_approach_rewards(self):
        # with gamma=0 the update is supervised regression toward reward
        cfg = QNetConfig(gamma=0.0, max_episodes=60, eps_start=0.3,
                         eps_end=0.05, min_episodes_before_eval=10 ** 9)
        result = run_training(cfg, seed=6)
        model = result.model
        rng = SeededRng(7)
        residuals = []
        state = env_reset(rng)
        for _ in range(60):
            q = model.forward(state.as_column())[:, 0]
            act = int(np.argmax(q))
            new_state, reward, terminal = env_step(state, act)
            residuals.append(abs(float(q[act]) - reward))
            state = env_reset(rng) if terminal else new_state
        assert float(np.mean(residuals)) < 0.1

    def test_replay_off_trains_on_latest_transition(self):
        cfg = QNetConfig(replay_capacity=0, max_episodes=5,
                         min_episodes_before_eval=10 ** 9)
        result = run_training(cfg, seed=8)
        assert len(result.episodes) == 5
        assert all(r.mean_loss >= 0 for r in result.episodes)

    def test_untrained_policy_is_short(self):
        model = build_qnet(64, seed=11)
        mean_len, lengths = evaluate_greedy(model, episodes=20, max_steps=200,
                                            seed=12)
        assert len(lengths) == 20
        assert mean_len < 50

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            QNetConfig(gamma=1.0)
        with pytest.raises(ConfigError):
            QNetConfig(eps_start=2.0)
