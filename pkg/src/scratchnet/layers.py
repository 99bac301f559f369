"""Computational layers under a uniform forward/backward contract.

Every layer caches what its own backward pass needs during ``forward``;
``backward`` consumes the cache and writes parameter gradients into
preallocated buffers, so the (parameter, gradient) pairs returned by
``parameters()`` stay valid across steps. One layer instance serves one
training stream at a time.

Gradient conventions: upstream and returned gradients use the column
convention (same layout as the activations they correspond to), and
parameter gradients are summed over the batch; the 1/B normalization lives
in the loss alone.
"""

import numpy as np

from . import fftconv, tensor
from .errors import ShapeError, StateError


class Layer:
    """Base contract: forward(x) -> y, backward(upstream) -> input gradient."""

    _param_fields = ()

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError

    def parameters(self):
        """(parameter, gradient) pairs; gradients are written in place."""
        return [(getattr(self, f), getattr(self, "d" + f)) for f in self._param_fields]

    def parameter_names(self):
        return list(self._param_fields)

    def init_params(self, rng, std):
        pass

    def _need(self, cache, what="forward"):
        if cache is None:
            raise StateError(f"{type(self).__name__}.backward called before {what}")
        return cache


class Linear(Layer):
    """y = W x + b on feature columns (in_dim x B -> out_dim x B)."""

    _param_fields = ("W", "b")

    def __init__(self, in_dim, out_dim, dtype=np.float32):
        if in_dim < 1 or out_dim < 1:
            raise ShapeError(f"linear extents must be >= 1, got {in_dim}, {out_dim}")
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = np.zeros((out_dim, in_dim), dtype=dtype)
        self.b = np.zeros((out_dim, 1), dtype=dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def init_params(self, rng, std):
        self.W[...] = rng.normal(self.W.shape, std=std, dtype=self.W.dtype)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[0] != self.in_dim:
            raise ShapeError(f"linear expected ({self.in_dim}, B) input, got {x.shape}")
        self._x = x
        return tensor.matmul(self.W, x) + self.b

    def backward(self, upstream):
        x = self._need(self._x)
        if upstream.shape != (self.out_dim, x.shape[1]):
            raise ShapeError(f"upstream {upstream.shape} does not match output "
                             f"({self.out_dim}, {x.shape[1]})")
        self.dW[...] = tensor.matmul(upstream, x.T)
        self.db[...] = upstream.sum(axis=1, keepdims=True)
        return tensor.matmul(self.W.T, upstream)


class Conv(Layer):
    """Multi-channel true convolution: y_o = sum_i conv(x_i, k_io) + b_o.

    Kernels are Kh x Kw x Cin x Cout; activations H x W x C x B. The forward
    pass runs in the frequency domain (see fftconv); backward recovers the
    input gradient by correlation with the kernels and the kernel gradient by
    flipping the correlation of upstream with input.
    """

    _param_fields = ("k", "b")

    def __init__(self, kernel_hw, in_channels, out_channels,
                 pad=(0, 0, 0, 0), stride=(1, 1), dtype=np.float32):
        kh, kw = kernel_hw
        self.k = np.zeros((kh, kw, in_channels, out_channels), dtype=dtype)
        self.b = np.zeros(out_channels, dtype=dtype)
        self.dk = np.zeros_like(self.k)
        self.db = np.zeros_like(self.b)
        self.pad = tuple(pad)
        self.stride = tuple(stride)
        self._bank = None
        self._out_shape = None

    def init_params(self, rng, std):
        self.k[...] = rng.normal(self.k.shape, std=std, dtype=self.k.dtype)

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[2] != self.k.shape[2]:
            raise ShapeError(f"conv expected (H, W, {self.k.shape[2]}, B) input, "
                             f"got {x.shape}")
        geom = fftconv.ConvGeometry(x.shape[:2], self.k.shape[:2], self.pad, self.stride)
        self._bank = fftconv.ConvBank(geom)
        y = self._bank.forward(x, self.k) + self.b.reshape(1, 1, -1, 1)
        self._out_shape = y.shape
        return y

    def backward(self, upstream):
        bank = self._need(self._bank)
        if upstream.shape != self._out_shape:
            raise ShapeError(f"upstream {upstream.shape} does not match output "
                             f"{self._out_shape}")
        dx, dk = bank.backward(upstream, self.k.dtype)
        self.dk[...] = dk
        self.db[...] = upstream.sum(axis=(0, 1, 3))
        return dx


class MaxPool(Layer):
    """Window maximum over H x W with per-window source-index recovery.

    Padding cells act as -inf, so they are never selected; ties go to the
    first cell in window row-major order. Overlapping windows accumulate
    gradients onto shared argmax cells.
    """

    def __init__(self, window, stride=None, pad=(0, 0, 0, 0)):
        wr, wc = window
        stride = tuple(stride) if stride is not None else (wr, wc)
        if min(wr, wc) < 1 or min(stride) < 1:
            raise ShapeError(f"pool window/stride must be >= 1, got {window}, {stride}")
        self.window = (wr, wc)
        self.stride = stride
        self.pad = tuple(pad)
        self._from_idx = None
        self._in_shape = None

    def forward(self, x, train=False):
        if x.ndim != 4:
            raise ShapeError(f"pool expected (H, W, C, B) input, got {x.shape}")
        cols, src = tensor.im2col_pool(x, self.window, self.stride, self.pad,
                                       pad_value=-np.inf)
        if not (src != tensor.INDEX_SENTINEL).any(axis=0).all():
            raise ShapeError("pooling geometry produces an all-padding window")
        pick = np.argmax(cols, axis=0)
        lanes = np.arange(cols.shape[1])
        self._from_idx = src[pick, lanes]
        self._in_shape = x.shape
        h, w, c, n = x.shape
        ho = tensor.pool_extent(h + self.pad[0] + self.pad[1], self.window[0], self.stride[0])
        wo = tensor.pool_extent(w + self.pad[2] + self.pad[3], self.window[1], self.stride[1])
        return cols[pick, lanes].reshape(ho, wo, c, n)

    def backward(self, upstream):
        idx = self._need(self._from_idx)
        if upstream.size != idx.size:
            raise ShapeError(f"upstream size {upstream.size} does not match "
                             f"{idx.size} pooled outputs")
        return tensor.scatter_accumulate(self._in_shape, idx, upstream.reshape(-1))


class ReLU(Layer):
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""

    def __init__(self):
        self._mask = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, upstream):
        return upstream * self._need(self._mask)


class Sigmoid(Layer):
    def __init__(self):
        self._y = None

    def forward(self, x, train=False):
        self._y = _sigmoid(x)
        return self._y

    def backward(self, upstream):
        y = self._need(self._y)
        return upstream * y * (1.0 - y)


class Tanh(Layer):
    def __init__(self):
        self._y = None

    def forward(self, x, train=False):
        self._y = np.tanh(x)
        return self._y

    def backward(self, upstream):
        y = self._need(self._y)
        return upstream * (1.0 - y * y)


class Flatten(Layer):
    """Collapse all leading axes into rows, keeping the batch axis last."""

    def __init__(self):
        self._shape = None

    def forward(self, x, train=False):
        if x.ndim < 2:
            raise ShapeError(f"flatten expects a batched tensor, got {x.shape}")
        self._shape = x.shape
        return x.reshape(-1, x.shape[-1])

    def backward(self, upstream):
        return upstream.reshape(self._need(self._shape))


def _sigmoid(x):
    # sign-split form: never exponentiates a positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax(logits):
    with np.errstate(invalid="ignore", over="ignore"):  # inf logits -> nan loss
        shift = logits - logits.max(axis=0, keepdims=True)
        return shift - np.log(np.exp(shift).sum(axis=0, keepdims=True))


class SoftmaxLogLoss:
    """Mean negative log-likelihood of integer labels under softmax.

    forward(logits: K x B, labels: B ints) -> scalar; backward() returns
    (softmax - onehot) / B.
    """

    def __init__(self):
        self.probs = None
        self._labels = None

    def forward(self, logits, labels):
        labels = np.asarray(labels)
        if logits.ndim != 2 or labels.shape != (logits.shape[1],):
            raise ShapeError(f"need (K, B) logits and B labels, got {logits.shape} "
                             f"and {labels.shape}")
        k = logits.shape[0]
        if labels.min() < 0 or labels.max() >= k:
            raise IndexError(f"label outside [0, {k}): "
                             f"{int(labels[(labels < 0) | (labels >= k)][0])}")
        logp = log_softmax(logits)
        self.probs = np.exp(logp)
        self._labels = labels
        picked = logp[labels, np.arange(labels.size)]
        return float(-picked.mean())

    def backward(self):
        if self.probs is None:
            raise StateError("loss backward called before forward")
        b = self._labels.size
        grad = self.probs.copy()
        grad[self._labels, np.arange(b)] -= 1.0
        return grad / b


class SquaredLoss:
    """Mean over batch columns of the summed squared residual."""

    def __init__(self):
        self._residual = None

    def forward(self, pred, target):
        target = np.asarray(target, dtype=pred.dtype)
        if pred.shape != target.shape:
            raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
        self._residual = pred - target
        with np.errstate(over="ignore"):  # divergence surfaces as inf loss
            return float((self._residual ** 2).sum() / pred.shape[-1])

    def backward(self):
        if self._residual is None:
            raise StateError("loss backward called before forward")
        return 2.0 * self._residual / self._residual.shape[-1]
