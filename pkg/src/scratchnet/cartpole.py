"""Q-network reinforcement learning on a built-in cart-pole environment.

Dynamics use the conventional parameterization of the classic benchmark:
gravity 9.8 m/s^2, cart mass 1.0 kg, pole mass 0.1 kg, pole half-length
0.5 m, force +-10 N, Euler integration at 0.02 s, failure when |x| > 2.4 m
or |theta| > 12 degrees. Reward is 1 per non-terminal step and 0 at
termination; the Q-target drops the bootstrap term on terminal transitions.

Learning follows one-step Q-updates: target = reward + gamma * max_a
Q(next, a) (treated as a constant), squared error on the taken action's
output only, gradients through the current network. A replay buffer is on
by default; capacity 0 reproduces literal per-step updates on the latest
transition.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, StateError
from .layers import Linear, ReLU
from .network import SequentialModel, init_model_params
from .optim import OptimHyper, make_optimizer
from .tensor import SeededRng, derive_seed

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
POLE_HALF_LENGTH = 0.5
FORCE_MAG = 10.0
TIME_STEP = 0.02
X_LIMIT = 2.4
THETA_LIMIT = 12.0 * math.pi / 180.0

N_ACTIONS = 2  # 0: push left, 1: push right


@dataclass(frozen=True)
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float

    def as_column(self, dtype=np.float64):
        return np.array([[self.x], [self.x_dot], [self.theta], [self.theta_dot]],
                        dtype=dtype)


@dataclass(frozen=True)
class Transition:
    state_old: CartPoleState
    act: int
    reward: float
    state_new: CartPoleState
    terminal: bool


def is_terminal(state):
    return abs(state.x) > X_LIMIT or abs(state.theta) > THETA_LIMIT


def env_reset(rng):
    """Uniform start in [-0.05, 0.05] per component (x, x_dot, theta, theta_dot)."""
    vals = [rng.uniform((), -0.05, 0.05) for _ in range(4)]
    return CartPoleState(float(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]))


def _accelerations(state, force):
    sin_t = math.sin(state.theta)
    cos_t = math.cos(state.theta)
    total_mass = CART_MASS + POLE_MASS
    pole_ml = POLE_MASS * POLE_HALF_LENGTH
    temp = (force + pole_ml * state.theta_dot ** 2 * sin_t) / total_mass
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t ** 2 / total_mass))
    x_acc = temp - pole_ml * theta_acc * cos_t / total_mass
    return x_acc, theta_acc


def _euler_step(state, force):
    x_acc, theta_acc = _accelerations(state, force)
    return CartPoleState(
        x=state.x + TIME_STEP * state.x_dot,
        x_dot=state.x_dot + TIME_STEP * x_acc,
        theta=state.theta + TIME_STEP * state.theta_dot,
        theta_dot=state.theta_dot + TIME_STEP * theta_acc)


def env_step(state, act):
    """One Euler step under force -10 N (act 0) or +10 N (act 1)."""
    if act not in (0, 1):
        raise ConfigError(f"action must be 0 or 1, got {act}")
    if is_terminal(state):
        raise StateError("env_step called on a terminal state")
    new = _euler_step(state, FORCE_MAG if act == 1 else -FORCE_MAG)
    terminal = is_terminal(new)
    return new, (0.0 if terminal else 1.0), terminal


def q_target(transition, q_values_new, gamma):
    """reward + gamma * max_a Q(new, a); bootstrap dropped when terminal."""
    if transition.terminal:
        return float(transition.reward)
    return float(transition.reward + gamma * np.max(q_values_new))


def epsilon_greedy(q_values, epsilon, rng):
    """Uniform action with probability epsilon, else argmax (ties -> lowest)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(1, len(q_values))[0])
    return int(np.argmax(q_values))


class MaskedSquaredLoss:
    """Squared error on one selected output row per batch column.

    forward(pred: A x B, (actions, targets)) -> mean squared residual over
    the batch; gradients for non-selected rows are exactly zero.
    """

    def __init__(self):
        self._cache = None

    def forward(self, pred, act_target):
        actions, targets = act_target
        b = pred.shape[1]
        lanes = np.arange(b)
        residual = pred[actions, lanes] - targets
        self._cache = (pred.shape, actions, lanes, residual)
        return float((residual ** 2).mean())

    def backward(self):
        if self._cache is None:
            raise StateError("loss backward called before forward")
        shape, actions, lanes, residual = self._cache
        grad = np.zeros(shape, dtype=residual.dtype)
        grad[actions, lanes] = 2.0 * residual / residual.size
        return grad


@dataclass
class QNetConfig:
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.995
    hidden: int = 64
    replay_capacity: int = 10000
    replay_batch: int = 32
    max_episodes: int = 2000
    max_steps: int = 200
    success_threshold: float = 195.0
    optimizer: str = "adam"
    hyper: OptimHyper = field(default_factory=lambda: OptimHyper(lr=1e-3))
    eval_every: int = 25
    eval_episodes: int = 100
    min_episodes_before_eval: int = 50
    stop_on_success: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        for name in ("eps_start", "eps_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.replay_capacity < 0 or self.max_episodes < 0 or self.max_steps < 1:
            raise ConfigError("replay_capacity/max_episodes/max_steps out of range")


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    total_reward: float
    epsilon: float
    mean_loss: float


@dataclass
class QTrainResult:
    episodes: list
    model: SequentialModel
    solved_at: int | None
    eval_history: list


class ReplayBuffer:
    def __init__(self, capacity):
        self.capacity = capacity
        self.items = []
        self._next = 0

    def __len__(self):
        return len(self.items)

    def push(self, transition):
        if len(self.items) < self.capacity:
            self.items.append(transition)
        else:
            self.items[self._next] = transition
            self._next = (self._next + 1) % self.capacity

    def sample(self, rng, k):
        idx = rng.integers(k, len(self.items))
        return [self.items[int(i)] for i in idx]


def build_qnet(hidden, seed, dtype=np.float64):
    model = SequentialModel([Linear(4, hidden, dtype=dtype), ReLU(),
                             Linear(hidden, N_ACTIONS, dtype=dtype)], dtype=dtype)
    init_model_params(model, SeededRng(derive_seed(seed, 0x9)))
    return model


def _states_to_batch(states, dtype=np.float64):
    return np.array([[s.x, s.x_dot, s.theta, s.theta_dot] for s in states],
                    dtype=dtype).T


def q_train_step(model, transitions, gamma, optimizer, loss=None):
    """One batched Q-update; the target's bootstrap is held constant."""
    if not transitions:
        raise ConfigError("q_train_step needs a non-empty batch")
    loss = loss or MaskedSquaredLoss()
    dtype = model.layers[0].W.dtype
    new_states = _states_to_batch([t.state_new for t in transitions], dtype)
    q_new = model.forward(new_states)  # evaluated first: caches are per-call
    targets = np.array([q_target(t, q_new[:, j], gamma)
                        for j, t in enumerate(transitions)], dtype=dtype)
    actions = np.array([t.act for t in transitions])

    old_states = _states_to_batch([t.state_old for t in transitions], dtype)
    pred = model.forward(old_states, train=True)
    value = loss.forward(pred, (actions, targets))
    if not np.isfinite(value):
        raise NumericError(f"non-finite Q loss: {value}")
    model.backward(loss.backward())
    optimizer.step()
    return value


def greedy_episode_length(model, rng, max_steps):
    state = env_reset(rng)
    for step in range(max_steps):
        q = model.forward(state.as_column(model.layers[0].W.dtype))[:, 0]
        state, _, terminal = env_step(state, int(np.argmax(q)))
        if terminal:
            return step + 1
    return max_steps


def evaluate_greedy(model, episodes, max_steps, seed):
    rng = SeededRng(derive_seed(seed, 0xE7A1))
    lengths = [greedy_episode_length(model, rng, max_steps) for _ in range(episodes)]
    return float(np.mean(lengths)), lengths


def run_training(config: QNetConfig, seed):
    """Episode loop with epsilon-greedy acting and per-step Q-updates."""
    rng = SeededRng(seed)
    model = build_qnet(config.hidden, seed)
    optimizer = make_optimizer(config.optimizer, model.named_parameters(), config.hyper)
    buffer = ReplayBuffer(config.replay_capacity) if config.replay_capacity else None
    loss = MaskedSquaredLoss()

    records = []
    eval_history = []
    solved_at = None
    epsilon = config.eps_start
    for episode in range(config.max_episodes):
        state = env_reset(rng)
        losses = []
        total_reward = 0.0
        steps = 0
        for _ in range(config.max_steps):
            q = model.forward(state.as_column())[:, 0]
            act = epsilon_greedy(q, epsilon, rng)
            try:
                new_state, reward, terminal = env_step(state, act)
            except NumericError as err:
                raise NumericError(f"episode {episode + 1}: {err}") from None
            transition = Transition(state, act, reward, new_state, terminal)
            if buffer is not None:
                buffer.push(transition)
                if len(buffer) >= config.replay_batch:
                    batch = buffer.sample(rng, config.replay_batch)
                    losses.append(q_train_step(model, batch, config.gamma,
                                               optimizer, loss))
            else:
                losses.append(q_train_step(model, [transition], config.gamma,
                                           optimizer, loss))
            total_reward += reward
            steps += 1
            state = new_state
            if terminal:
                break
        records.append(EpisodeRecord(episode=episode + 1, steps=steps,
                                     total_reward=total_reward, epsilon=epsilon,
                                     mean_loss=float(np.mean(losses)) if losses else 0.0))
        epsilon = max(config.eps_end, epsilon * config.eps_decay)

        due = (episode + 1 >= config.min_episodes_before_eval
               and (episode + 1) % config.eval_every == 0
               and np.mean([r.steps for r in records[-10:]]) >= 100)
        if due:
            mean_len, _ = evaluate_greedy(model, config.eval_episodes,
                                          config.max_steps,
                                          derive_seed(seed, episode + 1))
            eval_history.append((episode + 1, mean_len))
            if mean_len >= config.success_threshold:
                solved_at = episode + 1
                if config.stop_on_success:
                    break
    return QTrainResult(episodes=records, model=model, solved_at=solved_at,
                        eval_history=eval_history)
