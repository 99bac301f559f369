"""Sequential model container, training loop, and gradient-check harness."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import datasets as datamod
from .errors import ConfigError, DivergenceError, ShapeError
from .layers import Conv, Linear, ReLU
from .optim import OptimHyper, SelectiveSgdConfig, make_optimizer, selective_sgd_search
from .tensor import SeededRng, derive_seed


class SequentialModel:
    """Ordered layer stack: forward applies in order, backward in reverse."""

    def __init__(self, layers, probe_shape=None, dtype=np.float32):
        self.layers = list(layers)
        self.dtype = dtype
        if probe_shape is not None:
            self.forward(np.zeros(probe_shape, dtype=dtype))

    def forward(self, x, train=False):
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train=train)
            except ShapeError as err:
                raise ShapeError(f"layer {i} ({type(layer).__name__}): {err}") from None
        return x

    def backward(self, upstream):
        for i in reversed(range(len(self.layers))):
            try:
                upstream = self.layers[i].backward(upstream)
            except ShapeError as err:
                raise ShapeError(f"layer {i} ({type(self.layers[i]).__name__}): "
                                 f"{err}") from None
        return upstream

    def parameters(self):
        return [pair for layer in self.layers for pair in layer.parameters()]

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for fname, (p, g) in zip(layer.parameter_names(), layer.parameters()):
                out.append((f"{i}.{fname}", p, g))
        return out

    def state_dict(self):
        return {name: p.copy() for name, p, _ in self.named_parameters()}

    def load_state_dict(self, state):
        for name, p, _ in self.named_parameters():
            if name not in state:
                raise ShapeError(f"checkpoint is missing tensor {name!r}")
            if tuple(state[name].shape) != tuple(p.shape):
                raise ShapeError(f"tensor {name!r} has shape {state[name].shape}, "
                                 f"expected {p.shape}")
            p[...] = state[name]


def init_model_params(model, rng):
    """Scaled-Gaussian init: std sqrt(2/fan_in) into relu, sqrt(1/fan_in)
    otherwise; biases stay zero. Deterministic in layer order."""
    layers = model.layers
    for i, layer in enumerate(layers):
        if isinstance(layer, Linear):
            fan_in = layer.in_dim
        elif isinstance(layer, Conv):
            kh, kw, cin, _ = layer.k.shape
            fan_in = kh * kw * cin
        else:
            continue
        gain = 1.0
        for nxt in layers[i + 1:]:
            if isinstance(nxt, (Linear, Conv)):
                break
            if isinstance(nxt, ReLU):
                gain = 2.0
                break
        layer.init_params(rng, std=float(np.sqrt(gain / fan_in)))


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 100
    optimizer: str = "sgd"
    hyper: OptimHyper = field(default_factory=OptimHyper)
    selective: SelectiveSgdConfig | None = None
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_err: float
    test_loss: float
    test_err: float
    seconds: float


@dataclass
class TrainResult:
    metrics: list
    optimizer: object
    rng: SeededRng
    chosen_lr: float
    epochs_done: int


def _error_rate(outputs, labels):
    labels = np.asarray(labels)
    if outputs.ndim == 2 and labels.ndim == 1 and np.issubdtype(labels.dtype, np.integer):
        return float((outputs.argmax(axis=0) != labels).mean())
    return 0.0


def evaluate(model, loss, dataset, batch_size=256):
    """Mean loss and top-1 error over a dataset, in sequential batches."""
    total_loss = 0.0
    total_err = 0.0
    n = 0
    for x, labels in datamod.batches(dataset, batch_size, rng=None):
        out = model.forward(x)
        b = x.shape[-1]
        total_loss += loss.forward(out, labels) * b
        total_err += _error_rate(out, labels) * b
        n += b
    return total_loss / n, total_err / n


def _search_sample(train_set, config, epoch):
    """Fixed batch sequence for learning-rate trials, from a derived stream."""
    sub_rng = SeededRng(derive_seed(config.seed, 0x5E1 + epoch))
    n_batches = max(1, min(config.selective.trial_iterations,
                           train_set.size // config.batch_size or 1))
    out = []
    for x, labels in datamod.batches(train_set, config.batch_size, sub_rng):
        out.append((x, labels))
        if len(out) >= n_batches:
            break
    return out


def _run_selective(model, loss, train_set, config, optimizer, epoch, rate_cap=None):
    sel = config.selective
    if rate_cap is not None:
        allowed = tuple(r for r in sel.candidate_rates if r <= rate_cap)
        if not allowed:
            return None
        sel = replace(sel, candidate_rates=allowed)
    sample = _search_sample(train_set, config, epoch)

    def factory(rate):
        return make_optimizer(config.optimizer, model.named_parameters(),
                              replace(config.hyper, lr=rate))

    result = selective_sgd_search(model, loss, sample, factory, sel)
    optimizer.set_lr(result.rate)
    return result.rate


def train(model, loss, train_set, test_set, config: TrainConfig, resume=None):
    """Run shuffled mini-batch epochs; returns metrics plus final state.

    Deterministic under a fixed (seed, config, data): shuffles come from the
    run's own seeded generator, whose state travels through checkpoints via
    ``resume`` (a dict carrying params/optimizer/rng/epoch from checkpoint).
    Aborts with DivergenceError after 3 consecutive evaluations with
    non-finite training loss.
    """
    if train_set.size == 0 or test_set.size == 0:
        raise ConfigError("train and test sets must be non-empty")
    optimizer = make_optimizer(config.optimizer, model.named_parameters(), config.hyper)
    rng = SeededRng(config.seed)
    start_epoch = 0
    if resume is not None:
        model.load_state_dict(resume["model"])
        optimizer.load_state_dict(resume["optimizer"])
        rng.set_state(resume["rng_state"])
        start_epoch = resume["epochs_done"]

    chosen_lr = config.hyper.lr
    if config.selective is not None and start_epoch == 0 and config.epochs > 0:
        picked = _run_selective(model, loss, train_set, config, optimizer, epoch=0)
        if picked is not None:
            chosen_lr = picked

    metrics = []
    bad_evals = 0
    clock = time.time()
    for epoch in range(start_epoch, config.epochs):
        if (config.selective is not None and config.selective.reselect_every
                and epoch > 0 and epoch % config.selective.reselect_every == 0):
            picked = _run_selective(model, loss, train_set, config, optimizer,
                                    epoch=epoch, rate_cap=chosen_lr)
            if picked is not None:
                chosen_lr = picked

        loss_sum = 0.0
        err_sum = 0.0
        seen = 0
        for x, labels in datamod.batches(train_set, config.batch_size, rng):
            out = model.forward(x, train=True)
            value = loss.forward(out, labels)
            b = x.shape[-1]
            seen += b
            err_sum += _error_rate(out, labels) * b
            if np.isfinite(value):
                loss_sum += value * b
                model.backward(loss.backward())
                optimizer.step()
            else:
                loss_sum += np.inf

        if (epoch + 1 - start_epoch) % config.eval_every == 0 or epoch + 1 == config.epochs:
            train_loss = loss_sum / seen
            test_loss, test_err = evaluate(model, loss, test_set, config.batch_size)
            now = time.time()
            metrics.append(EpochRecord(epoch=epoch + 1,
                                       train_loss=float(train_loss),
                                       train_err=err_sum / seen,
                                       test_loss=float(test_loss),
                                       test_err=float(test_err),
                                       seconds=now - clock))
            clock = now
            bad_evals = bad_evals + 1 if not np.isfinite(train_loss) else 0
            if bad_evals >= 3:
                raise DivergenceError(
                    f"training loss non-finite for {bad_evals} consecutive "
                    f"evaluations (epoch {epoch + 1})")

    return TrainResult(metrics=metrics, optimizer=optimizer, rng=rng,
                       chosen_lr=chosen_lr, epochs_done=config.epochs)


@dataclass
class LayerCheck:
    name: str
    coords: int
    max_rel_err: float


@dataclass
class GradCheckReport:
    tolerance: float
    per_layer: list

    @property
    def max_rel_err(self):
        return max((c.max_rel_err for c in self.per_layer), default=0.0)

    @property
    def passed(self):
        return all(c.max_rel_err <= self.tolerance for c in self.per_layer)

    def summary(self):
        lines = [f"{c.name:24s} coords={c.coords:3d} "
                 f"max_rel_err={c.max_rel_err:.3e} "
                 f"{'ok' if c.max_rel_err <= self.tolerance else 'FAIL'}"
                 for c in self.per_layer]
        lines.append(f"overall: max_rel_err={self.max_rel_err:.3e} "
                     f"tolerance={self.tolerance:.1e} "
                     f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def grad_check(model, loss, x, target, coords_per_layer=5, h=1e-5,
               tolerance=1e-4, seed=0):
    """Compare analytic parameter gradients against central differences.

    Relative error per sampled coordinate is
    |analytic - cd| / max(|analytic|, |cd|, 1e-12). Requires 64-bit
    parameters; 32-bit differences are noise-dominated at h=1e-5.
    """
    named = model.named_parameters()
    for name, p, _ in named:
        if p.dtype != np.float64:
            raise ConfigError(f"grad_check needs float64 parameters; {name!r} "
                              f"is {p.dtype}")
    loss.forward(model.forward(x, train=True), target)
    model.backward(loss.backward())
    analytic = {name: g.copy() for name, _, g in named}

    rng = SeededRng(derive_seed(seed, 0x6C))
    checks = []
    for name, p, _ in named:
        n_coords = min(coords_per_layer, p.size)
        coords = rng.integers(n_coords, p.size)
        worst = 0.0
        for c in coords:
            c = int(c)
            old = p.flat[c]
            p.flat[c] = old + h
            lp = loss.forward(model.forward(x), target)
            p.flat[c] = old - h
            lm = loss.forward(model.forward(x), target)
            p.flat[c] = old
            cd = (lp - lm) / (2.0 * h)
            ana = analytic[name].flat[c]
            worst = max(worst, abs(ana - cd) / max(abs(ana), abs(cd), 1e-12))
        checks.append(LayerCheck(name=name, coords=n_coords, max_rel_err=worst))
    return GradCheckReport(tolerance=tolerance, per_layer=checks)
