"""LSTM sequence model, backpropagation through time, char language model.

Gate equations (column convention, hidden x B activations):

  i = sigmoid(W_ih h_prev + W_ix x + b_i)      input gate
  o = sigmoid(W_oh h_prev + W_ox x + b_o)      output gate
  f = sigmoid(W_fh h_prev + W_fx x + b_f)      forget gate
  g = tanh   (W_gh h_prev + W_gx x + b_g)      cell candidate
  c = f * c_prev + i * g;   h = o * tanh(c)

Inputs are integer character ids; W_*x columns double as the character
embedding. A projection (W_y, b_y) maps h to vocabulary logits and each
step contributes a softmax log-loss term; the sequence loss is the sum over
steps. The backward sweep carries dz/dc through time via
dc_prev = dc * f plus each step's own dz_t/dc_t term.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, ShapeError, StateError
from .layers import SoftmaxLogLoss, _sigmoid, log_softmax
from .network import EpochRecord, GradCheckReport, LayerCheck
from .optim import OptimHyper, make_optimizer, selective_sgd_search
from .tensor import SeededRng, derive_seed

GATES = ("i", "o", "f", "g")


class LstmParams:
    """Eight gate weight matrices, four gate biases, and the output
    projection, with matching preallocated gradient buffers."""

    def __init__(self, vocab_size, hidden, dtype=np.float32):
        if vocab_size < 1 or hidden < 1:
            raise ShapeError(f"vocab and hidden must be >= 1, got "
                             f"{vocab_size}, {hidden}")
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.dtype = dtype
        self.arrays = {}
        for gate in GATES:
            self.arrays[f"W{gate}h"] = np.zeros((hidden, hidden), dtype=dtype)
            self.arrays[f"W{gate}x"] = np.zeros((hidden, vocab_size), dtype=dtype)
            self.arrays[f"b{gate}"] = np.zeros((hidden, 1), dtype=dtype)
        self.arrays["Wy"] = np.zeros((vocab_size, hidden), dtype=dtype)
        self.arrays["by"] = np.zeros((vocab_size, 1), dtype=dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def init_params(self, rng):
        std_h = float(np.sqrt(1.0 / self.hidden))
        for name, arr in self.arrays.items():
            if name.startswith("W"):
                fan = self.hidden if name == "Wy" or name.endswith("h") else 1.0
                # W*x columns act as one-hot embeddings: unit fan-in
                std = float(np.sqrt(1.0 / fan)) if fan > 1 else std_h
                arr[...] = rng.normal(arr.shape, std=std, dtype=self.dtype)

    def __getattr__(self, name):
        arrays = self.__dict__.get("arrays", {})
        if name in arrays:
            return arrays[name]
        raise AttributeError(name)

    def named_parameters(self):
        return [(k, self.arrays[k], self.grads[k]) for k in self.arrays]

    def state_dict(self):
        return {k: v.copy() for k, v in self.arrays.items()}

    def load_state_dict(self, state):
        for k, v in self.arrays.items():
            if k not in state:
                raise ShapeError(f"checkpoint is missing tensor {k!r}")
            if state[k].shape != v.shape:
                raise ShapeError(f"tensor {k!r} has shape {state[k].shape}, "
                                 f"expected {v.shape}")
            v[...] = state[k]


@dataclass
class LstmCache:
    inputs: np.ndarray
    h0: np.ndarray
    c0: np.ndarray
    steps: list  # per t: dict with i, o, f, g, c, tanh_c, h, probs


def lstm_forward(params, inputs, targets, h0=None, c0=None):
    """Run T steps and sum the per-step losses (z = sum_t z_t).

    inputs/targets: T x B integer ids; returns (z, cache) with everything
    the backward sweep needs retained per step.
    """
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    if targets.ndim == 1:
        targets = targets[:, None]
    if inputs.size == 0:
        raise DataError("sequence is empty")
    if inputs.shape != targets.shape:
        raise ShapeError(f"inputs {inputs.shape} and targets {targets.shape} differ")
    if inputs.max() >= params.vocab_size or targets.max() >= params.vocab_size \
            or inputs.min() < 0 or targets.min() < 0:
        raise IndexError(f"character id outside [0, {params.vocab_size})")

    t_len, batch = inputs.shape
    h = h0 if h0 is not None else np.zeros((params.hidden, batch), dtype=params.dtype)
    c = c0 if c0 is not None else np.zeros((params.hidden, batch), dtype=params.dtype)
    cache = LstmCache(inputs=inputs, h0=h, c0=c, steps=[])
    loss = SoftmaxLogLoss()
    z = 0.0
    for t in range(t_len):
        xt = inputs[t]
        gates = {}
        for gate in GATES:
            pre = (params.arrays[f"W{gate}h"] @ h
                   + params.arrays[f"W{gate}x"][:, xt]
                   + params.arrays[f"b{gate}"])
            gates[gate] = np.tanh(pre) if gate == "g" else _sigmoid(pre)
        c = gates["f"] * c + gates["i"] * gates["g"]
        tanh_c = np.tanh(c)
        h = gates["o"] * tanh_c
        logits = params.Wy @ h + params.by
        z += loss.forward(logits, targets[t])
        cache.steps.append({**gates, "c": c, "tanh_c": tanh_c, "h": h,
                            "probs": loss.probs})
    return float(z), cache


def lstm_backward(params, cache, targets):
    """Reverse-time sweep; writes into params.grads, returns (dh0, dc0).

    The cell-state recurrence carries dz/dc_{t-1} = dz/dc_t * f_t plus the
    step's own contribution through h_t; gate gradients compose with the
    gate nonlinearity derivatives and accumulate into the shared weights.
    """
    if cache is None or not cache.steps:
        raise StateError("lstm_backward called without a forward cache")
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = targets[:, None]
    t_len, batch = cache.inputs.shape
    if targets.shape != (t_len, batch):
        raise ShapeError(f"targets {targets.shape} do not match cached "
                         f"sequence ({t_len}, {batch})")

    for g in params.grads.values():
        g[...] = 0.0
    dh_next = np.zeros((params.hidden, batch), dtype=params.dtype)
    dc_next = np.zeros((params.hidden, batch), dtype=params.dtype)

    for t in reversed(range(t_len)):
        step = cache.steps[t]
        h_prev = cache.steps[t - 1]["h"] if t > 0 else cache.h0
        c_prev = cache.steps[t - 1]["c"] if t > 0 else cache.c0
        xt = cache.inputs[t]

        dlogits = step["probs"].copy()
        dlogits[targets[t], np.arange(batch)] -= 1.0
        dlogits /= batch
        params.grads["Wy"] += dlogits @ step["h"].T
        params.grads["by"] += dlogits.sum(axis=1, keepdims=True)

        dh = params.Wy.T @ dlogits + dh_next
        do = dh * step["tanh_c"]
        dc = dh * step["o"] * (1.0 - step["tanh_c"] ** 2) + dc_next
        di = dc * step["g"]
        df = dc * c_prev
        dg = dc * step["i"]

        raw = {
            "i": di * step["i"] * (1.0 - step["i"]),
            "o": do * step["o"] * (1.0 - step["o"]),
            "f": df * step["f"] * (1.0 - step["f"]),
            "g": dg * (1.0 - step["g"] ** 2),
        }
        dh_prev = np.zeros_like(dh)
        for gate in GATES:
            d = raw[gate]
            params.grads[f"W{gate}h"] += d @ h_prev.T
            np.add.at(params.grads[f"W{gate}x"], (slice(None), xt), d)
            params.grads[f"b{gate}"] += d.sum(axis=1, keepdims=True)
            dh_prev += params.arrays[f"W{gate}h"].T @ d
        dh_next = dh_prev
        dc_next = dc * step["f"]
    return dh_next, dc_next


@dataclass
class CharVocab:
    chars: tuple

    @property
    def size(self):
        return len(self.chars)

    def encode(self, text):
        lut = {ch: i for i, ch in enumerate(self.chars)}
        try:
            return np.array([lut[ch] for ch in text], dtype=np.int64)
        except KeyError as err:
            raise DataError(f"character {err} not in vocabulary")

    def decode(self, ids):
        return "".join(self.chars[int(i)] for i in ids)


def char_dataset(text, seq_len):
    """Vocabulary plus fixed-length next-char windows (stride = window).

    Returns (vocab, inputs, targets) with inputs/targets shaped
    (num_windows, seq_len); targets are inputs shifted one character.
    """
    if not text:
        raise DataError("corpus is empty")
    if seq_len < 1:
        raise ConfigError(f"seq_len must be >= 1, got {seq_len}")
    vocab = CharVocab(tuple(sorted(set(text))))
    encoded = vocab.encode(text)
    starts = range(0, len(text) - seq_len, seq_len)
    inputs = np.stack([encoded[s:s + seq_len] for s in starts]) if len(starts) \
        else np.zeros((0, seq_len), dtype=np.int64)
    targets = np.stack([encoded[s + 1:s + 1 + seq_len] for s in starts]) if len(starts) \
        else np.zeros((0, seq_len), dtype=np.int64)
    return vocab, inputs, targets


def sample(params, vocab, seed_char, length, temperature, rng):
    """Generate text one character at a time from the seeded generator;
    temperature 0 means greedy argmax."""
    if seed_char not in vocab.chars:
        raise DataError(f"seed character {seed_char!r} not in vocabulary")
    if temperature < 0:
        raise ConfigError(f"temperature must be >= 0, got {temperature}")
    h = np.zeros((params.hidden, 1), dtype=params.dtype)
    c = np.zeros((params.hidden, 1), dtype=params.dtype)
    current = int(vocab.encode(seed_char)[0])
    out = [seed_char]
    for _ in range(length):
        gates = {}
        for gate in GATES:
            pre = (params.arrays[f"W{gate}h"] @ h
                   + params.arrays[f"W{gate}x"][:, [current]]
                   + params.arrays[f"b{gate}"])
            gates[gate] = np.tanh(pre) if gate == "g" else _sigmoid(pre)
        c = gates["f"] * c + gates["i"] * gates["g"]
        h = gates["o"] * np.tanh(c)
        logits = (params.Wy @ h + params.by)[:, 0]
        if temperature == 0:
            current = int(np.argmax(logits))
        else:
            logp = log_softmax((logits / temperature)[:, None])[:, 0]
            cdf = np.cumsum(np.exp(logp))
            current = int(np.searchsorted(cdf, rng.random() * cdf[-1]))
            current = min(current, params.vocab_size - 1)
        out.append(vocab.chars[current])
    return "".join(out)


@dataclass
class CharLmConfig:
    epochs: int
    hidden: int = 30
    seq_len: int = 50
    batch_size: int = 32
    optimizer: str = "rmsprop"
    hyper: OptimHyper = field(default_factory=lambda: OptimHyper(lr=2e-3))
    clip: float = 5.0
    holdout_frac: float = 0.1
    seed: int = 0
    selective: object = None
    precision: int = 32

    def __post_init__(self):
        if self.epochs < 0 or self.hidden < 1 or self.seq_len < 1 or self.batch_size < 1:
            raise ConfigError("epochs/hidden/seq_len/batch_size out of range")
        if not 0 < self.holdout_frac < 1:
            raise ConfigError(f"holdout_frac must be in (0, 1), got {self.holdout_frac}")


@dataclass
class CharLmResult:
    metrics: list
    params: LstmParams
    vocab: CharVocab
    optimizer: object
    chosen_lr: float


class _WindowModel:
    """Adapter giving LstmParams the sequential-model surface that the
    learning-rate search drives (forward stores the cache, backward clips)."""

    def __init__(self, params, clip):
        self.params = params
        self.clip = clip
        self._cache = None
        self._targets = None

    def state_dict(self):
        return self.params.state_dict()

    def load_state_dict(self, state):
        self.params.load_state_dict(state)

    def named_parameters(self):
        return self.params.named_parameters()

    def forward(self, window, train=False):
        inputs, targets = window
        z, self._cache = lstm_forward(self.params, inputs, targets)
        self._targets = targets
        return z / inputs.shape[0]  # per-step loss for comparability

    def backward(self, _upstream):
        lstm_backward(self.params, self._cache, self._targets)
        if self.clip:
            for g in self.params.grads.values():
                np.clip(g, -self.clip, self.clip, out=g)


class _PassThroughLoss:
    def forward(self, value, _target):
        self.value = value
        return float(value)

    def backward(self):
        return None


def _window_batches(inputs, targets, batch_size, order):
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield inputs[idx].T.copy(), targets[idx].T.copy()


def _eval_windows(params, inputs, targets, batch_size=64):
    total_loss = 0.0
    correct = 0
    count = 0
    for inp, tgt in _window_batches(inputs, targets, batch_size, np.arange(len(inputs))):
        z, cache = lstm_forward(params, inp, tgt)
        total_loss += z * inp.shape[1]
        for t, step in enumerate(cache.steps):
            correct += int((step["probs"].argmax(axis=0) == tgt[t]).sum())
        count += inp.size
    if count == 0:
        return 0.0, 0.0
    return total_loss / count, correct / count


def train_char_lm(text, config: CharLmConfig):
    """Train the character model on a text corpus, evaluating on a held-out
    tail split; returns per-epoch metrics (err = 1 - next-char accuracy)."""
    import time

    split = int(len(text) * (1.0 - config.holdout_frac))
    if split < config.seq_len + 1 or len(text) - split < config.seq_len + 1:
        raise DataError("corpus too short for the requested window length")
    vocab, _, _ = char_dataset(text, config.seq_len)  # vocab over whole corpus
    train_ids = vocab.encode(text[:split])
    eval_ids = vocab.encode(text[split:])

    def windows(ids):
        starts = range(0, len(ids) - config.seq_len, config.seq_len)
        inp = np.stack([ids[s:s + config.seq_len] for s in starts])
        tgt = np.stack([ids[s + 1:s + 1 + config.seq_len] for s in starts])
        return inp, tgt

    train_inp, train_tgt = windows(train_ids)
    eval_inp, eval_tgt = windows(eval_ids)

    dtype = np.float64 if config.precision == 64 else np.float32
    params = LstmParams(vocab.size, config.hidden, dtype=dtype)
    params.init_params(SeededRng(derive_seed(config.seed, 0x11)))
    rng = SeededRng(config.seed)
    optimizer = make_optimizer(config.optimizer, params.named_parameters(), config.hyper)
    shim = _WindowModel(params, config.clip)

    chosen_lr = config.hyper.lr
    if config.selective is not None and config.epochs > 0:
        sub = SeededRng(derive_seed(config.seed, 0x5E1))
        order = sub.permutation(len(train_inp))
        sample_batches = [
            (batch, batch[1]) for batch in
            _window_batches(train_inp, train_tgt, config.batch_size,
                            order[:config.selective.trial_iterations * config.batch_size])
        ]

        def factory(rate):
            return make_optimizer(config.optimizer, params.named_parameters(),
                                  replace(config.hyper, lr=rate))

        result = selective_sgd_search(shim, _PassThroughLoss(), sample_batches,
                                      factory, config.selective)
        chosen_lr = result.rate
        optimizer.set_lr(chosen_lr)

    metrics = []
    clock = time.time()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_inp))
        loss_sum = 0.0
        correct = 0
        seen = 0
        for inp, tgt in _window_batches(train_inp, train_tgt, config.batch_size, order):
            z, cache = lstm_forward(params, inp, tgt)
            lstm_backward(params, cache, tgt)
            if config.clip:
                for g in params.grads.values():
                    np.clip(g, -config.clip, config.clip, out=g)
            optimizer.step()
            loss_sum += z * inp.shape[1]
            for t, step in enumerate(cache.steps):
                correct += int((step["probs"].argmax(axis=0) == tgt[t]).sum())
            seen += inp.size
        test_loss, test_acc = _eval_windows(params, eval_inp, eval_tgt)
        now = time.time()
        metrics.append(EpochRecord(
            epoch=epoch + 1,
            train_loss=loss_sum / seen,
            train_err=1.0 - correct / seen,
            test_loss=test_loss,
            test_err=1.0 - test_acc,
            seconds=now - clock))
        clock = now
    return CharLmResult(metrics=metrics, params=params, vocab=vocab,
                        optimizer=optimizer, chosen_lr=chosen_lr)


def unigram_baseline(text, holdout_frac=0.1):
    """Accuracy of always predicting the training split's most common char,
    measured on the held-out tail."""
    split = int(len(text) * (1.0 - holdout_frac))
    train, tail = text[:split], text[split:]
    if not train or not tail:
        raise DataError("corpus too short to split")
    counts = {}
    for ch in train:
        counts[ch] = counts.get(ch, 0) + 1
    top = max(sorted(counts), key=counts.get)
    return sum(1 for ch in tail if ch == top) / len(tail)


def lstm_grad_check(hidden=4, vocab=6, t_len=5, batch=2, coords_per_param=4,
                    h=1e-5, tolerance=1e-4, seed=0):
    """Central-difference check of every LSTM parameter gradient (64-bit)."""
    params = LstmParams(vocab, hidden, dtype=np.float64)
    params.init_params(SeededRng(derive_seed(seed, 1)))
    rng = SeededRng(derive_seed(seed, 2))
    inputs = rng.integers(t_len * batch, vocab).reshape(t_len, batch)
    targets = rng.integers(t_len * batch, vocab).reshape(t_len, batch)

    z, cache = lstm_forward(params, inputs, targets)
    lstm_backward(params, cache, targets)
    analytic = {k: v.copy() for k, v in params.grads.items()}

    checks = []
    for name, arr, _ in params.named_parameters():
        n_coords = min(coords_per_param, arr.size)
        coords = rng.integers(n_coords, arr.size)
        worst = 0.0
        for cidx in coords:
            cidx = int(cidx)
            old = arr.flat[cidx]
            arr.flat[cidx] = old + h
            lp, _ = lstm_forward(params, inputs, targets)
            arr.flat[cidx] = old - h
            lm, _ = lstm_forward(params, inputs, targets)
            arr.flat[cidx] = old
            cd = (lp - lm) / (2.0 * h)
            ana = analytic[name].flat[cidx]
            worst = max(worst, abs(ana - cd) / max(abs(ana), abs(cd), 1e-12))
        checks.append(LayerCheck(name=name, coords=n_coords, max_rel_err=worst))
    return GradCheckReport(tolerance=tolerance, per_layer=checks)
