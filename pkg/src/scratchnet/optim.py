"""SGD-family optimizers and the Selective-SGD learning-rate search.

All optimizers consume (name, parameter, gradient) triples and update the
parameter arrays in place. Weight decay, when nonzero, is added to the raw
gradient as an L2 term before any accumulator sees it. Update rules:

  sgd      v = momentum * v + g;              p -= lr * v
  adagrad  G += g^2;                          p -= lr * g / (sqrt(G) + eps)
  rmsprop  E = rho * E + (1 - rho) * g^2;     p -= lr * g / (sqrt(E) + eps)
  adam     m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2; t += 1
           p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, SearchError


@dataclass
class OptimHyper:
    lr: float = 0.01
    momentum: float = 0.0
    rho: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0 < self.rho < 1:
            raise ConfigError(f"rho must be in (0, 1), got {self.rho}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"betas must be in (0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {self.weight_decay}")


class Optimizer:
    """Base: owns named (param, grad) triples and per-parameter slot arrays."""

    slot_names = ()

    def __init__(self, params, hyper: OptimHyper):
        self.triples = [(name, p, g) for name, p, g in params]
        self.hyper = hyper
        self.t = 0
        self.slots = {
            slot: [np.zeros_like(p) for _, p, _ in self.triples]
            for slot in self.slot_names
        }

    def set_lr(self, lr):
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        self.hyper.lr = lr

    def step(self):
        self.t += 1
        wd = self.hyper.weight_decay
        for i, (name, p, g) in enumerate(self.triples):
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            if p.shape != g.shape:
                raise ConfigError(f"gradient shape {g.shape} does not match "
                                  f"parameter {name!r} {p.shape}")
            eff = g + wd * p if wd else g
            self._update(i, p, eff)

    def _update(self, i, p, g):
        raise NotImplementedError

    def state_dict(self):
        out = {"t": np.array([self.t], dtype=np.int64)}
        for slot, arrays in self.slots.items():
            for (name, _, _), arr in zip(self.triples, arrays):
                out[f"{slot}.{name}"] = arr.copy()
        return out

    def load_state_dict(self, state):
        self.t = int(state["t"][0])
        for slot, arrays in self.slots.items():
            for (name, _, _), arr in zip(self.triples, arrays):
                arr[...] = state[f"{slot}.{name}"]


class SGD(Optimizer):
    slot_names = ("velocity",)

    def _update(self, i, p, g):
        if self.hyper.momentum:
            v = self.slots["velocity"][i]
            v *= self.hyper.momentum
            v += g
            g = v
        p -= self.hyper.lr * g


class Adagrad(Optimizer):
    slot_names = ("sq_sum",)

    def _update(self, i, p, g):
        acc = self.slots["sq_sum"][i]
        acc += g * g
        p -= self.hyper.lr * g / (np.sqrt(acc) + self.hyper.eps)


class RMSProp(Optimizer):
    slot_names = ("sq_ema",)

    def _update(self, i, p, g):
        acc = self.slots["sq_ema"][i]
        acc *= self.hyper.rho
        acc += (1.0 - self.hyper.rho) * g * g
        p -= self.hyper.lr * g / (np.sqrt(acc) + self.hyper.eps)


class Adam(Optimizer):
    slot_names = ("m", "v")

    def _update(self, i, p, g):
        h = self.hyper
        m, v = self.slots["m"][i], self.slots["v"][i]
        m *= h.beta1
        m += (1.0 - h.beta1) * g
        v *= h.beta2
        v += (1.0 - h.beta2) * g * g
        m_hat = m / (1.0 - h.beta1 ** self.t)
        v_hat = v / (1.0 - h.beta2 ** self.t)
        p -= h.lr * m_hat / (np.sqrt(v_hat) + h.eps)


OPTIMIZERS = {"sgd": SGD, "adagrad": Adagrad, "rmsprop": RMSProp, "adam": Adam}


def make_optimizer(kind, params, hyper):
    try:
        cls = OPTIMIZERS[kind]
    except KeyError:
        raise ConfigError(f"unknown optimizer {kind!r}; choose from "
                          f"{sorted(OPTIMIZERS)}")
    return cls(params, hyper)


@dataclass
class SelectiveSgdConfig:
    """Learning-rate search settings: a descending candidate sweep, short
    trials from a common snapshot, exponentially smoothed trial loss."""

    candidate_rates: tuple = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    trial_iterations: int = 50
    reselect_every: int | None = None
    smoothing: float = 0.1

    def __post_init__(self):
        rates = tuple(float(r) for r in self.candidate_rates)
        if not rates or any(r <= 0 for r in rates):
            raise ConfigError(f"candidate rates must be positive, got {rates}")
        self.candidate_rates = tuple(sorted(rates, reverse=True))
        if self.trial_iterations < 1:
            raise ConfigError("trial_iterations must be >= 1")
        if not 0 < self.smoothing <= 1:
            raise ConfigError(f"smoothing must be in (0, 1], got {self.smoothing}")


@dataclass
class SelectiveSearchResult:
    rate: float
    trial_losses: dict = field(default_factory=dict)


def selective_sgd_search(model, loss, sample_batches, optimizer_factory, config):
    """Pick the candidate rate whose short trial reaches the lowest loss.

    Every trial starts from a snapshot of the model taken on entry and sees
    the same batch sequence; the snapshot is restored before returning, so
    the caller's parameters are bit-identical to what they were. Ties go to
    the larger rate. Raises SearchError if every candidate diverges.
    """
    if not sample_batches:
        raise ConfigError("selective search needs at least one sample batch")
    snapshot = model.state_dict()
    alpha = config.smoothing
    trial_losses = {}
    try:
        for rate in config.candidate_rates:  # descending; ties keep the larger
            model.load_state_dict(snapshot)
            opt = optimizer_factory(rate)
            smoothed = None
            for it in range(config.trial_iterations):
                x, target = sample_batches[it % len(sample_batches)]
                value = loss.forward(model.forward(x, train=True), target)
                if not np.isfinite(value):
                    smoothed = np.inf
                    break
                model.backward(loss.backward())
                try:
                    opt.step()
                except NumericError:
                    smoothed = np.inf
                    break
                smoothed = value if smoothed is None else alpha * value + (1 - alpha) * smoothed
            trial_losses[rate] = float(smoothed)
    finally:
        model.load_state_dict(snapshot)
    best = None
    for rate in config.candidate_rates:
        v = trial_losses[rate]
        if np.isfinite(v) and (best is None or v < trial_losses[best]):
            best = rate
    if best is None:
        raise SearchError("all candidate learning rates diverged; "
                          "retry with smaller candidates")
    return SelectiveSearchResult(rate=best, trial_losses=trial_losses)
